use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar confounder model: a scene-level latent `Z` drives both the feature
/// projection (`a1 * Z + eps1`) and the label side (`a2 * Z + eps2`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfounderConfig {
    pub a1: f64,
    pub a2: f64,
    pub var_z: f64,
    pub var_eps1: f64,
    pub var_eps2: f64,
}

impl Default for ConfounderConfig {
    fn default() -> Self {
        Self { a1: 0.5, a2: 1.0, var_z: 1.0, var_eps1: 0.0, var_eps2: 1.0 }
    }
}

impl ConfounderConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("var_z", self.var_z), ("var_eps1", self.var_eps1), ("var_eps2", self.var_eps2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("confounder {name} must be finite and nonnegative, got {v}")));
            }
        }
        if !self.a1.is_finite() || !self.a2.is_finite() {
            return Err(Error::config("confounder coefficients must be finite"));
        }
        Ok(())
    }

    /// Variance of the feature-side projection `a1 * Z + eps1`.
    pub fn feature_variance(&self) -> f64 {
        self.a1 * self.a1 * self.var_z + self.var_eps1
    }

    /// Standard deviation of the label-side variable `a2 * Z + eps2`.
    pub fn label_std(&self) -> f64 {
        (self.a2 * self.a2 * self.var_z + self.var_eps2).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Number of foreground relation classes `K`; label `K` is background.
    pub num_relation_classes: usize,
    pub num_object_classes: usize,
    pub feature_dim: usize,
    /// Zipf exponent of the relation-class marginal.
    pub zipf_exponent: f64,
    /// Explicit relative class weights; overrides `zipf_exponent` when set.
    pub class_weights: Option<Vec<f64>>,
    /// Zipf exponent of the subject/object pair distribution inside a class.
    pub pair_zipf_exponent: f64,
    /// Distinct (subject, object) pair types per relation class.
    pub pairs_per_class: usize,
    /// Magnitude of the pair-dependent feature offset; 0 disables it.
    pub pair_feature_scale: f64,
    /// Probability that a foreground relation is drawn from the scene's
    /// cluster rather than the global marginal.
    pub cooccurrence_strength: f64,
    /// Width of the contiguous class-index blocks forming clusters.
    pub cluster_width: usize,
    pub confounder: ConfounderConfig,
    pub num_scenes: usize,
    pub relations_per_scene: CountRange,
    pub background_fraction: f64,
    /// Per-axis standard deviation of background features.
    pub background_std: f64,
    pub class_mean_separation: f64,
    pub class_noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_relation_classes: 10,
            num_object_classes: 12,
            feature_dim: 16,
            zipf_exponent: 1.0,
            class_weights: None,
            pair_zipf_exponent: 1.0,
            pairs_per_class: 12,
            pair_feature_scale: 0.0,
            cooccurrence_strength: 0.8,
            cluster_width: 3,
            confounder: ConfounderConfig::default(),
            num_scenes: 1000,
            relations_per_scene: CountRange { min: 20, max: 40 },
            background_fraction: 0.7,
            background_std: 1.5,
            class_mean_separation: 1.5,
            class_noise_std: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.num_relation_classes;
        if k == 0 {
            return Err(Error::config("num_relation_classes must be positive"));
        }
        if self.num_object_classes == 0 {
            return Err(Error::config("num_object_classes must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim must be positive"));
        }
        if self.num_scenes == 0 {
            return Err(Error::config("num_scenes must be positive"));
        }
        let r = self.relations_per_scene;
        if r.min == 0 || r.min > r.max {
            return Err(Error::config(format!("relations_per_scene range {}..={} is empty", r.min, r.max)));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::config("zipf_exponent must be finite and nonnegative"));
        }
        if !(self.pair_zipf_exponent >= 0.0 && self.pair_zipf_exponent.is_finite()) {
            return Err(Error::config("pair_zipf_exponent must be finite and nonnegative"));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != k {
                return Err(Error::config(format!("class_weights has {} entries, expected {k}", w.len())));
            }
            if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::config("class_weights must be nonnegative with a positive sum"));
            }
        }
        if self.pairs_per_class == 0 || self.pairs_per_class > self.num_object_classes * self.num_object_classes {
            return Err(Error::config(format!(
                "pairs_per_class must be in 1..={}",
                self.num_object_classes * self.num_object_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.cooccurrence_strength) {
            return Err(Error::config("cooccurrence_strength must lie in [0, 1]"));
        }
        if self.cluster_width == 0 {
            return Err(Error::config("cluster_width must be positive"));
        }
        if !(0.0..1.0).contains(&self.background_fraction) {
            return Err(Error::config("background_fraction must lie in [0, 1)"));
        }
        if !(self.class_mean_separation > 0.0 && self.class_mean_separation.is_finite()) {
            return Err(Error::config("class_mean_separation must be positive"));
        }
        if !(self.class_noise_std > 0.0 && self.class_noise_std.is_finite()) {
            return Err(Error::config("class_noise_std must be positive"));
        }
        if !(self.background_std > 0.0 && self.background_std.is_finite()) {
            return Err(Error::config("background_std must be positive"));
        }
        if !(self.pair_feature_scale >= 0.0 && self.pair_feature_scale.is_finite()) {
            return Err(Error::config("pair_feature_scale must be finite and nonnegative"));
        }
        self.confounder.validate()
    }

    /// Normalised relation-class prior implied by the configuration.
    pub fn class_priors(&self) -> Vec<f64> {
        let raw: Vec<f64> = match &self.class_weights {
            Some(w) => w.clone(),
            None => (0..self.num_relation_classes).map(|k| ((k + 1) as f64).powf(-self.zipf_exponent)).collect(),
        };
        normalise(&raw)
    }

    /// Normalised Zipf weights over pair ranks within a class.
    pub fn pair_rank_weights(&self) -> Vec<f64> {
        let raw: Vec<f64> =
            (0..self.pairs_per_class).map(|r| ((r + 1) as f64).powf(-self.pair_zipf_exponent)).collect();
        normalise(&raw)
    }

    /// Contiguous class blocks used as co-occurrence clusters.
    pub fn clusters(&self) -> Vec<std::ops::Range<usize>> {
        let k = self.num_relation_classes;
        (0..k).step_by(self.cluster_width).map(|start| start..(start + self.cluster_width).min(k)).collect()
    }
}

fn normalise(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}
