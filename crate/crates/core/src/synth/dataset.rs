use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::SynthConfig;
use crate::error::{Error, Result};

/// One subject-object relation inside a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationshipInstance {
    /// Position of the instance in its dataset.
    pub id: usize,
    pub scene_id: usize,
    pub subject_class: usize,
    pub object_class: usize,
    /// Foreground class in `0..K`, or `K` for background.
    pub relation_label: usize,
    pub feature: Vec<f64>,
}

impl RelationshipInstance {
    pub fn pair(&self) -> (usize, usize) {
        (self.subject_class, self.object_class)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub scene_id: usize,
    /// Latent co-occurrence cluster; unknown for datasets read from disk.
    pub cluster_id: Option<usize>,
    /// Index range of the scene's instances in [`Dataset::instances`].
    pub span: Range<usize>,
}

/// Scenes stored back to back: a scene's instances are a contiguous slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: SynthConfig,
    scenes: Vec<Scene>,
    instances: Vec<RelationshipInstance>,
}

impl Dataset {
    /// Builds a dataset from per-scene instance lists, assigning instance ids
    /// in storage order.
    pub fn from_scenes(
        config: SynthConfig,
        scenes: Vec<(usize, Option<usize>, Vec<RelationshipInstance>)>,
    ) -> Result<Self> {
        let k = config.num_relation_classes;
        let d = config.feature_dim;
        let mut out_scenes = Vec::with_capacity(scenes.len());
        let mut instances = Vec::new();
        for (scene_id, cluster_id, members) in scenes {
            if members.is_empty() {
                return Err(Error::data(format!("scene {scene_id} has no instances")));
            }
            let start = instances.len();
            for mut inst in members {
                if inst.scene_id != scene_id {
                    return Err(Error::data(format!(
                        "instance tagged scene {} stored in scene {scene_id}",
                        inst.scene_id
                    )));
                }
                if inst.relation_label > k {
                    return Err(Error::data(format!(
                        "relation label {} exceeds background index {k}",
                        inst.relation_label
                    )));
                }
                if inst.feature.len() != d {
                    return Err(Error::data(format!(
                        "feature length {} differs from feature_dim {d}",
                        inst.feature.len()
                    )));
                }
                inst.id = instances.len();
                instances.push(inst);
            }
            out_scenes.push(Scene { scene_id, cluster_id, span: start..instances.len() });
        }
        Ok(Self { config, scenes: out_scenes, instances })
    }

    pub fn scenes(&self) -> &[Scene] {
        &self.scenes
    }

    pub fn instances(&self) -> &[RelationshipInstance] {
        &self.instances
    }

    pub fn instance(&self, id: usize) -> &RelationshipInstance {
        &self.instances[id]
    }

    pub fn scene_instances(&self, scene: &Scene) -> &[RelationshipInstance] {
        &self.instances[scene.span.clone()]
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_relation_classes
    }

    pub fn background_label(&self) -> usize {
        self.config.num_relation_classes
    }

    pub fn is_background(&self, inst: &RelationshipInstance) -> bool {
        inst.relation_label == self.background_label()
    }

    pub fn foreground_count(&self) -> usize {
        self.instances.iter().filter(|i| !self.is_background(i)).count()
    }

    /// Ids of all foreground instances of one class, in storage order.
    pub fn class_ids(&self, class: usize) -> Vec<usize> {
        self.instances.iter().filter(|i| i.relation_label == class).map(|i| i.id).collect()
    }
}

/// Counts per label: entries `0..K` are foreground classes, entry `K` is
/// background.
pub fn relation_histogram(ds: &Dataset) -> Vec<usize> {
    let mut counts = vec![0usize; ds.num_classes() + 1];
    for inst in ds.instances() {
        counts[inst.relation_label] += 1;
    }
    counts
}

/// Scene-level co-occurrence of foreground classes.
///
/// `M[i][j]` (i != j) counts scenes containing both classes; `M[i][i]`
/// counts scenes containing class `i` at least twice.
pub fn cooccurrence_matrix(ds: &Dataset) -> Vec<Vec<usize>> {
    let k = ds.num_classes();
    let mut m = vec![vec![0usize; k]; k];
    let mut per_scene = vec![0usize; k];
    for scene in ds.scenes() {
        per_scene.iter_mut().for_each(|c| *c = 0);
        for inst in ds.scene_instances(scene) {
            if inst.relation_label < k {
                per_scene[inst.relation_label] += 1;
            }
        }
        for i in 0..k {
            if per_scene[i] == 0 {
                continue;
            }
            if per_scene[i] >= 2 {
                m[i][i] += 1;
            }
            for j in (i + 1)..k {
                if per_scene[j] > 0 {
                    m[i][j] += 1;
                    m[j][i] += 1;
                }
            }
        }
    }
    m
}
