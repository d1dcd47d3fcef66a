use super::{SynthConfig, WorldGeometry};
use crate::error::{Error, Result};

/// Bayes-optimal foreground classifier for a generated world.
///
/// Each class-conditional feature law is a mixture over the class's pair
/// components of Gaussians sharing the covariance
/// `sigma^2 I + c u u^T`, where `u` is the confounder direction and
/// `c = a1^2 var_z + var_eps1`. With `pair_feature_scale == 0` the mixture
/// collapses to one Gaussian and the rule is linear.
///
/// The rule is exact whenever the confounder does not also drive the label
/// (`a2 == 0` and `var_eps2` irrelevant, or `cooccurrence_strength == 0`).
#[derive(Clone, Debug)]
pub struct BayesOracle {
    /// Per class: `(ln weight, mean)` of each mixture component.
    components: Vec<Vec<(f64, Vec<f64>)>>,
    log_priors: Vec<f64>,
    direction: Vec<f64>,
    noise_var: f64,
    shrink: f64,
}

impl BayesOracle {
    pub fn new(cfg: &SynthConfig, balanced_prior: bool) -> Result<Self> {
        let geo = WorldGeometry::new(cfg)?;
        let k = cfg.num_relation_classes;
        let components = (0..k)
            .map(|class| {
                geo.class_pairs[class]
                    .iter()
                    .zip(&geo.pair_rank_weights)
                    .map(|(&pair, &w)| (w.ln(), geo.component_mean(cfg, class, pair)))
                    .collect()
            })
            .collect();
        let log_priors = if balanced_prior { vec![0.0; k] } else { geo.class_priors.iter().map(|p| p.ln()).collect() };
        let noise_var = cfg.class_noise_std * cfg.class_noise_std;
        let c = cfg.confounder.feature_variance();
        Ok(Self { components, log_priors, direction: geo.confounder_direction, noise_var, shrink: c / (noise_var + c) })
    }

    /// Squared Mahalanobis distance under the shared covariance.
    fn mahalanobis(&self, x: &[f64], mean: &[f64]) -> f64 {
        let mut sq = 0.0;
        let mut proj = 0.0;
        for ((xi, mi), ui) in x.iter().zip(mean).zip(&self.direction) {
            let v = xi - mi;
            sq += v * v;
            proj += v * ui;
        }
        (sq - self.shrink * proj * proj) / self.noise_var
    }

    /// Unnormalised log posterior of every foreground class.
    pub fn log_scores(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.direction.len() {
            return Err(Error::input(format!(
                "feature has length {}, oracle expects {}",
                feature.len(),
                self.direction.len()
            )));
        }
        Ok(self
            .components
            .iter()
            .zip(&self.log_priors)
            .map(|(comps, lp)| {
                let terms: Vec<f64> = comps.iter().map(|(lw, m)| lw - 0.5 * self.mahalanobis(feature, m)).collect();
                lp + log_sum_exp(&terms)
            })
            .collect())
    }

    /// Arg-max class; near-ties resolve toward the lower class index.
    pub fn predict(&self, feature: &[f64]) -> Result<usize> {
        let scores = self.log_scores(feature)?;
        Ok(argmax_lowest(&scores))
    }
}

pub(crate) fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        let b = scores[best];
        if s > b + 1e-9 * b.abs().max(1.0) {
            best = k;
        }
    }
    best
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// One-shot convenience wrapper around [`BayesOracle`].
pub fn bayes_optimal_predict(cfg: &SynthConfig, feature: &[f64], balanced_prior: bool) -> Result<usize> {
    BayesOracle::new(cfg, balanced_prior)?.predict(feature)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SynthConfig {
        SynthConfig { num_relation_classes: 4, feature_dim: 6, class_mean_separation: 5.0, ..Default::default() }
    }

    #[test]
    fn feature_at_class_mean_is_that_class() {
        let c = cfg();
        let geo = WorldGeometry::new(&c).unwrap();
        assert_eq!(bayes_optimal_predict(&c, &geo.class_means[2], true).unwrap(), 2);
    }

    #[test]
    fn midpoint_tie_goes_to_lower_index() {
        let c = cfg();
        let geo = WorldGeometry::new(&c).unwrap();
        let mid: Vec<f64> = geo.class_means[0].iter().zip(&geo.class_means[1]).map(|(a, b)| 0.5 * (a + b)).collect();
        assert_eq!(bayes_optimal_predict(&c, &mid, true).unwrap(), 0);
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        assert!(matches!(bayes_optimal_predict(&cfg(), &[0.0; 3], true), Err(Error::Input(_))));
    }

    #[test]
    fn skewed_prior_pulls_toward_head() {
        let c = SynthConfig { zipf_exponent: 3.0, ..cfg() };
        let geo = WorldGeometry::new(&c).unwrap();
        let mid: Vec<f64> = geo.class_means[0].iter().zip(&geo.class_means[3]).map(|(a, b)| 0.5 * (a + b)).collect();
        let tilted: Vec<f64> = mid.iter().zip(&geo.class_means[3]).map(|(m, t)| m + 0.05 * (t - m)).collect();
        assert_eq!(bayes_optimal_predict(&c, &tilted, true).unwrap(), 3);
        assert_eq!(bayes_optimal_predict(&c, &tilted, false).unwrap(), 0);
    }
}
