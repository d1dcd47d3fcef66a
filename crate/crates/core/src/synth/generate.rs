use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use super::{Dataset, RelationshipInstance, SynthConfig};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream, StreamRng};

/// Fixed, seed-derived structure shared by every split of one world.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldGeometry {
    pub class_means: Vec<Vec<f64>>,
    /// Unit direction carrying the confounder.
    pub confounder_direction: Vec<f64>,
    pub class_priors: Vec<f64>,
    /// Pair types of each class, most frequent first.
    pub class_pairs: Vec<Vec<(usize, usize)>>,
    pub pair_rank_weights: Vec<f64>,
    pub object_embeddings: Vec<Vec<f64>>,
}

impl WorldGeometry {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.num_relation_classes;
        let d = cfg.feature_dim;
        let mut rng = stream_rng(cfg.seed, Stream::Geometry);

        let class_means = if k <= d {
            (0..k)
                .map(|c| {
                    let mut m = vec![0.0; d];
                    m[c] = cfg.class_mean_separation;
                    m
                })
                .collect()
        } else {
            (0..k).map(|_| scaled(random_unit(&mut rng, d), cfg.class_mean_separation)).collect()
        };

        let all_pairs = cfg.num_object_classes * cfg.num_object_classes;
        let class_pairs = (0..k)
            .map(|_| {
                rand::seq::index::sample(&mut rng, all_pairs, cfg.pairs_per_class)
                    .into_iter()
                    .map(|p| (p / cfg.num_object_classes, p % cfg.num_object_classes))
                    .collect()
            })
            .collect();
        let object_embeddings = (0..cfg.num_object_classes).map(|_| random_unit(&mut rng, d)).collect();

        Ok(Self {
            class_means,
            confounder_direction: vec![1.0 / (d as f64).sqrt(); d],
            class_priors: cfg.class_priors(),
            class_pairs,
            pair_rank_weights: cfg.pair_rank_weights(),
            object_embeddings,
        })
    }

    /// Mean feature of one (class, pair) component.
    pub fn component_mean(&self, cfg: &SynthConfig, class: usize, pair: (usize, usize)) -> Vec<f64> {
        let mut m = self.class_means[class].clone();
        if cfg.pair_feature_scale > 0.0 {
            let s = cfg.pair_feature_scale / std::f64::consts::SQRT_2;
            let (a, b) = (&self.object_embeddings[pair.0], &self.object_embeddings[pair.1]);
            for (j, v) in m.iter_mut().enumerate() {
                *v += s * (a[j] + b[j]);
            }
        }
        m
    }
}

fn random_unit(rng: &mut StreamRng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn scaled(v: Vec<f64>, s: f64) -> Vec<f64> {
    v.into_iter().map(|x| x * s).collect()
}

/// Training split of the world described by `cfg`.
pub fn generate_world(cfg: &SynthConfig) -> Result<Dataset> {
    generate_split(cfg, cfg.num_scenes, Stream::Generation)
}

/// Held-out split with the same geometry and generative law as
/// [`generate_world`] but independent scenes.
pub fn generate_test_world(cfg: &SynthConfig, num_scenes: usize) -> Result<Dataset> {
    generate_split(cfg, num_scenes, Stream::TestGeneration)
}

fn generate_split(cfg: &SynthConfig, num_scenes: usize, stream: Stream) -> Result<Dataset> {
    let geo = WorldGeometry::new(cfg)?;
    let sampler = SceneSampler::new(cfg, &geo)?;
    let mut rng = stream_rng(cfg.seed, stream);
    let scenes = (0..num_scenes)
        .map(|scene_id| {
            let (cluster, members) = sampler.sample_scene(&mut rng, scene_id);
            (scene_id, Some(cluster), members)
        })
        .collect();
    Dataset::from_scenes(cfg.clone(), scenes)
}

struct SceneSampler<'a> {
    cfg: &'a SynthConfig,
    geo: &'a WorldGeometry,
    global: WeightedIndex<f64>,
    /// Per-cluster sampler over the cluster's classes (None for massless clusters).
    within: Vec<Option<WeightedIndex<f64>>>,
    cluster_ranges: Vec<std::ops::Range<usize>>,
    cluster_cdf: Vec<f64>,
    pair_rank: WeightedIndex<f64>,
    label_std: f64,
}

impl<'a> SceneSampler<'a> {
    fn new(cfg: &'a SynthConfig, geo: &'a WorldGeometry) -> Result<Self> {
        let weighted =
            |w: &[f64]| WeightedIndex::new(w.to_vec()).map_err(|e| Error::config(format!("class weights: {e}")));
        let cluster_ranges = cfg.clusters();
        let mut within = Vec::with_capacity(cluster_ranges.len());
        let mut cluster_cdf = Vec::with_capacity(cluster_ranges.len());
        let mut acc = 0.0;
        for r in &cluster_ranges {
            let w = &geo.class_priors[r.clone()];
            let mass: f64 = w.iter().sum();
            within.push(if mass > 0.0 { Some(weighted(w)?) } else { None });
            acc += mass;
            cluster_cdf.push(acc);
        }
        Ok(Self {
            cfg,
            geo,
            global: weighted(&geo.class_priors)?,
            within,
            cluster_ranges,
            cluster_cdf,
            pair_rank: weighted(&geo.pair_rank_weights)?,
            label_std: cfg.confounder.label_std(),
        })
    }

    /// Cluster whose cumulative prior mass first reaches `u`, so that cluster
    /// frequencies match their share of the class marginal.
    fn cluster_at(&self, u: f64) -> usize {
        let total = *self.cluster_cdf.last().unwrap();
        let target = u * total;
        self.cluster_cdf.iter().position(|&c| target < c).unwrap_or(self.cluster_cdf.len() - 1)
    }

    fn sample_scene(&self, rng: &mut StreamRng, scene_id: usize) -> (usize, Vec<RelationshipInstance>) {
        let cfg = self.cfg;
        let cc = &cfg.confounder;
        let k = cfg.num_relation_classes;
        let z = cc.var_z.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let eps2 = cc.var_eps2.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let u = if self.label_std > 0.0 {
            Normal::standard().cdf((cc.a2 * z + eps2) / self.label_std)
        } else {
            rng.random::<f64>()
        };
        let cluster = self.cluster_at(u);

        let n = rng.random_range(cfg.relations_per_scene.min..=cfg.relations_per_scene.max);
        let members = (0..n)
            .map(|_| {
                let shift = cc.a1 * z + cc.var_eps1.sqrt() * rng.sample::<f64, _>(StandardNormal);
                let (label, pair, mut feature) = if rng.random::<f64>() < cfg.background_fraction {
                    let pair =
                        (rng.random_range(0..cfg.num_object_classes), rng.random_range(0..cfg.num_object_classes));
                    let f = (0..cfg.feature_dim)
                        .map(|_| cfg.background_std * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    (k, pair, f)
                } else {
                    let class = match &self.within[cluster] {
                        Some(w) if rng.random::<f64>() < cfg.cooccurrence_strength => {
                            self.cluster_ranges[cluster].start + w.sample(rng)
                        }
                        _ => self.global.sample(rng),
                    };
                    let pair = self.geo.class_pairs[class][self.pair_rank.sample(rng)];
                    let mut f = self.geo.component_mean(cfg, class, pair);
                    for v in f.iter_mut() {
                        *v += cfg.class_noise_std * rng.sample::<f64, _>(StandardNormal);
                    }
                    (class, pair, f)
                };
                for (v, dir) in feature.iter_mut().zip(&self.geo.confounder_direction) {
                    *v += shift * dir;
                }
                RelationshipInstance {
                    id: 0,
                    scene_id,
                    subject_class: pair.0,
                    object_class: pair.1,
                    relation_label: label,
                    feature,
                }
            })
            .collect();
        (cluster, members)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{cooccurrence_matrix, relation_histogram, CountRange};

    fn small(seed: u64) -> SynthConfig {
        SynthConfig { num_scenes: 200, relations_per_scene: CountRange { min: 5, max: 10 }, seed, ..Default::default() }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_world(&small(3)).unwrap();
        let b = generate_world(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = generate_world(&small(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn test_split_shares_geometry_but_not_scenes() {
        let cfg = small(9);
        let train = generate_world(&cfg).unwrap();
        let test = generate_test_world(&cfg, 50).unwrap();
        assert_eq!(test.scenes().len(), 50);
        assert_ne!(train.instances()[0].feature, test.instances()[0].feature);
    }

    #[test]
    fn instances_respect_invariants() {
        let cfg = small(1);
        let ds = generate_world(&cfg).unwrap();
        for scene in ds.scenes() {
            let members = ds.scene_instances(scene);
            assert!(!members.is_empty());
            assert!(members.iter().all(|i| i.scene_id == scene.scene_id));
        }
        assert!(ds.instances().iter().all(|i| i.feature.len() == cfg.feature_dim && i.relation_label <= 10));
        assert!(ds.instances().iter().enumerate().all(|(n, i)| i.id == n));
    }

    #[test]
    fn class_means_are_distinct() {
        for k in [5, 40] {
            let cfg = SynthConfig { num_relation_classes: k, feature_dim: 8, ..Default::default() };
            let g = WorldGeometry::new(&cfg).unwrap();
            for a in 0..k {
                for b in (a + 1)..k {
                    assert_ne!(g.class_means[a], g.class_means[b]);
                }
            }
        }
    }

    #[test]
    fn uniform_two_class_world_is_balanced() {
        let cfg = SynthConfig {
            num_relation_classes: 2,
            zipf_exponent: 0.0,
            cooccurrence_strength: 0.0,
            cluster_width: 1,
            background_fraction: 0.0,
            num_scenes: 1000,
            relations_per_scene: CountRange { min: 10, max: 10 },
            seed: 5,
            ..Default::default()
        };
        let h = relation_histogram(&generate_world(&cfg).unwrap());
        let n = (h[0] + h[1]) as f64;
        let sigma = (n * 0.25).sqrt();
        assert!(((h[0] as f64) - n / 2.0).abs() <= 3.0 * sigma, "{h:?}");
    }

    #[test]
    fn histogram_matches_brute_force_recount() {
        let ds = generate_world(&small(11)).unwrap();
        let h = relation_histogram(&ds);
        for label in 0..=10 {
            let mut recount = 0;
            for scene in ds.scenes() {
                for inst in ds.scene_instances(scene) {
                    if inst.relation_label == label {
                        recount += 1;
                    }
                }
            }
            assert_eq!(h[label], recount);
        }
        assert_eq!(h.iter().sum::<usize>(), ds.instances().len());
    }

    #[test]
    fn cooccurrence_rows_reconstruct_from_scenes() {
        let ds = generate_world(&small(12)).unwrap();
        let m = cooccurrence_matrix(&ds);
        let k = ds.num_classes();
        for i in 0..k {
            assert_eq!(m[i], (0..k).map(|j| m[j][i]).collect::<Vec<_>>());
            let mut row_sum = 0;
            for scene in ds.scenes() {
                let labels: Vec<usize> = ds.scene_instances(scene).iter().map(|x| x.relation_label).collect();
                let ci = labels.iter().filter(|&&l| l == i).count();
                if ci == 0 {
                    continue;
                }
                for j in 0..k {
                    let cj = labels.iter().filter(|&&l| l == j).count();
                    if (j == i && ci >= 2) || (j != i && cj > 0) {
                        row_sum += 1;
                    }
                }
            }
            assert_eq!(m[i].iter().sum::<usize>(), row_sum);
        }
    }
}
