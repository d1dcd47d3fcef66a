//! Ranking metrics (R@K, mR@K, MR@K) and the causal diagnostics: confounder
//! correlation, spurious-correlation / overlapping error on finite worlds,
//! and batch-versus-dataset gradient alignment.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classifier::{Example, Gradients, SoftmaxModel};
use crate::error::{Error, Result};
use crate::synth::{argmax_lowest, ConfounderConfig, Dataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub mean_recall_at: BTreeMap<usize, f64>,
    pub mr_at: BTreeMap<usize, f64>,
    /// Per-class recall for each K value; classes without test instances
    /// are absent.
    pub per_class_recall: BTreeMap<usize, BTreeMap<usize, f64>>,
    pub background_included: bool,
    pub n_scenes: usize,
}

/// One CSV row of a [`MetricsReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub k: usize,
    pub recall: f64,
    pub mean_recall: f64,
    pub mr: f64,
    pub background_included: bool,
    pub n_scenes: usize,
}

impl MetricsReport {
    pub fn rows(&self) -> Vec<MetricsRow> {
        self.recall_at
            .keys()
            .map(|&k| MetricsRow {
                k,
                recall: self.recall_at[&k],
                mean_recall: self.mean_recall_at[&k],
                mr: self.mr_at[&k],
                background_included: self.background_included,
                n_scenes: self.n_scenes,
            })
            .collect()
    }
}

/// Predicted class and ranking confidence of one instance. With the
/// background output masked, both come from the foreground outputs only.
pub fn scored_prediction(probs: &[f64], num_classes: usize, include_background: bool) -> (usize, f64) {
    let cand = if include_background { probs } else { &probs[..num_classes] };
    let pred = argmax_lowest(cand);
    (pred, cand[pred])
}

/// Recall counts per class: `(hits, totals)` for each requested K.
fn recall_counts(
    model: &SoftmaxModel,
    ds: &Dataset,
    k_values: &[usize],
    include_background: bool,
) -> Result<(Vec<Vec<usize>>, Vec<usize>)> {
    let k = ds.num_classes();
    let mut hits = vec![vec![0usize; k]; k_values.len()];
    let mut totals = vec![0usize; k];
    for scene in ds.scenes() {
        let insts = ds.scene_instances(scene);
        let mut scored = Vec::with_capacity(insts.len());
        for inst in insts {
            let (pred, conf) = scored_prediction(&model.probabilities(&inst.feature)?, k, include_background);
            scored.push((conf, inst.id, pred, inst.relation_label));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (rank, &(_, _, pred, label)) in scored.iter().enumerate() {
            if label >= k {
                continue;
            }
            totals[label] += 1;
            for (h, &top) in hits.iter_mut().zip(k_values) {
                if rank < top && pred == label {
                    h[label] += 1;
                }
            }
        }
    }
    Ok((hits, totals))
}

/// Scene-level top-K recall of the foreground instances.
pub fn evaluate(
    model: &SoftmaxModel,
    ds: &Dataset,
    k_values: &[usize],
    include_background: bool,
) -> Result<MetricsReport> {
    if model.num_outputs() != ds.num_classes() + 1 {
        return Err(Error::input(format!(
            "model has {} outputs, dataset needs {}",
            model.num_outputs(),
            ds.num_classes() + 1
        )));
    }
    let (hits, totals) = recall_counts(model, ds, k_values, include_background)?;
    let total: usize = totals.iter().sum();
    if total == 0 {
        return Err(Error::input("evaluation split has no foreground instances"));
    }
    let mut report = MetricsReport {
        recall_at: BTreeMap::new(),
        mean_recall_at: BTreeMap::new(),
        mr_at: BTreeMap::new(),
        per_class_recall: BTreeMap::new(),
        background_included: include_background,
        n_scenes: ds.scenes().len(),
    };
    for (h, &top) in hits.iter().zip(k_values) {
        let recall = h.iter().sum::<usize>() as f64 / total as f64;
        let per_class: BTreeMap<usize, f64> =
            totals.iter().enumerate().filter(|(_, &n)| n > 0).map(|(c, &n)| (c, h[c] as f64 / n as f64)).collect();
        let mean_recall = per_class.values().sum::<f64>() / per_class.len() as f64;
        report.recall_at.insert(top, recall);
        report.mean_recall_at.insert(top, mean_recall);
        report.mr_at.insert(top, (recall + mean_recall) / 2.0);
        report.per_class_recall.insert(top, per_class);
    }
    Ok(report)
}

/// Closed-form Pearson correlation of `X = a1 Z + e1` and `Y = a2 Z + e2`
/// with `E[Z] = 0`.
pub fn analytic_rho(cc: &ConfounderConfig) -> Result<f64> {
    let cov = cc.a1 * cc.a2 * cc.var_z;
    let vx = cc.a1 * cc.a1 * cc.var_z + cc.var_eps1;
    let vy = cc.a2 * cc.a2 * cc.var_z + cc.var_eps2;
    if vx <= 0.0 || vy <= 0.0 {
        return Err(Error::Undefined(format!("correlation needs positive variances (var X = {vx}, var Y = {vy})")));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Sample Pearson correlation of `n` draws from the confounder model.
pub fn empirical_rho<R: Rng + ?Sized>(cc: &ConfounderConfig, n: usize, rng: &mut R) -> Result<f64> {
    if n < 2 {
        return Err(Error::input("empirical correlation needs at least two samples"));
    }
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let mut g = || -> f64 { rng.sample(StandardNormal) };
        let z = cc.var_z.sqrt() * g();
        let e1 = cc.var_eps1.sqrt() * g();
        let e2 = cc.var_eps2.sqrt() * g();
        xs.push(cc.a1 * z + e1);
        ys.push(cc.a2 * z + e2);
    }
    pearson(&xs, &ys)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("sample variance is zero".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// A classifier usable by the finite-world error estimators.
pub trait ProbabilisticClassifier {
    fn predict_proba(&self, feature: &[f64]) -> Result<Vec<f64>>;
}

impl ProbabilisticClassifier for SoftmaxModel {
    fn predict_proba(&self, feature: &[f64]) -> Result<Vec<f64>> {
        self.probabilities(feature)
    }
}

/// Adapts a plain function to [`ProbabilisticClassifier`].
pub struct FnClassifier<F>(pub F);

impl<F: Fn(&[f64]) -> Vec<f64>> ProbabilisticClassifier for FnClassifier<F> {
    fn predict_proba(&self, feature: &[f64]) -> Result<Vec<f64>> {
        Ok((self.0)(feature))
    }
}

/// One relationship feature value inside a scene type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureAtom {
    /// `P(R = r | X = x)`.
    pub prob: f64,
    /// `P(Y = k | R = r, X = x)`.
    pub label_probs: Vec<f64>,
    pub feature: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneType {
    /// `P(X = x)`.
    pub prob: f64,
    pub atoms: Vec<FeatureAtom>,
}

/// Finite joint support of scenes, features and labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleWorld {
    pub num_classes: usize,
    pub scenes: Vec<SceneType>,
}

/// Largest number of (scene, feature) atoms the exact estimators enumerate.
pub const MAX_ORACLE_ATOMS: usize = 1_000_000;

const PROB_TOL: f64 = 1e-9;

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || (p.iter().sum::<f64>() - 1.0).abs() > PROB_TOL {
        return Err(Error::input(format!("{what} is not a probability distribution")));
    }
    Ok(())
}

impl OracleWorld {
    pub fn validate(&self) -> Result<()> {
        let atoms: usize = self.scenes.iter().map(|s| s.atoms.len()).sum();
        if atoms > MAX_ORACLE_ATOMS {
            return Err(Error::OracleScale(format!("{atoms} atoms exceed the enumeration limit {MAX_ORACLE_ATOMS}")));
        }
        check_distribution(&self.scenes.iter().map(|s| s.prob).collect::<Vec<_>>(), "scene distribution")?;
        for s in &self.scenes {
            check_distribution(&s.atoms.iter().map(|a| a.prob).collect::<Vec<_>>(), "feature distribution")?;
            for a in &s.atoms {
                if a.label_probs.len() != self.num_classes {
                    return Err(Error::input("label distribution has the wrong length"));
                }
                check_distribution(&a.label_probs, "label distribution")?;
            }
        }
        Ok(())
    }

    fn predictions<C: ProbabilisticClassifier + ?Sized>(&self, model: &C) -> Result<Vec<Vec<Vec<f64>>>> {
        self.scenes
            .iter()
            .map(|s| {
                s.atoms
                    .iter()
                    .map(|a| {
                        let q = model.predict_proba(&a.feature)?;
                        if q.len() < self.num_classes {
                            return Err(Error::input("classifier has fewer outputs than the world has classes"));
                        }
                        Ok(q)
                    })
                    .collect()
            })
            .collect()
    }
}

/// `sum_k sum_x P(Y=k|x) [1 - P(Yhat=k | Y=k, x)] P(x)`, with the
/// label-conditioned prediction obtained by marginalising the features of
/// scene `x` under `P(r | Y=k, x)`.
pub fn sce_estimate<C: ProbabilisticClassifier + ?Sized>(model: &C, world: &OracleWorld) -> Result<f64> {
    world.validate()?;
    let preds = world.predictions(model)?;
    let mut total = 0.0;
    for (s, q) in world.scenes.iter().zip(&preds) {
        for k in 0..world.num_classes {
            let p_k: f64 = s.atoms.iter().map(|a| a.prob * a.label_probs[k]).sum();
            if p_k <= 0.0 {
                continue;
            }
            let hit: f64 = s.atoms.iter().zip(q).map(|(a, qa)| a.prob * a.label_probs[k] / p_k * qa[k]).sum();
            total += p_k * (1.0 - hit) * s.prob;
        }
    }
    Ok(total)
}

/// `sum_k sum_{r,x} P(Y=k|r,x) [1 - P(Yhat=k | r, x)] P(r, x)`.
pub fn oe_estimate<C: ProbabilisticClassifier + ?Sized>(model: &C, world: &OracleWorld) -> Result<f64> {
    world.validate()?;
    let preds = world.predictions(model)?;
    let mut total = 0.0;
    for (s, q) in world.scenes.iter().zip(&preds) {
        for (a, qa) in s.atoms.iter().zip(q) {
            let joint = s.prob * a.prob;
            for k in 0..world.num_classes {
                total += a.label_probs[k] * (1.0 - qa[k]) * joint;
            }
        }
    }
    Ok(total)
}

pub fn gradient_cosine(a: &Gradients, b: &Gradients) -> Option<f64> {
    let (fa, fb) = (a.flatten(), b.flatten());
    let dot: f64 = fa.iter().zip(&fb).map(|(x, y)| x * y).sum();
    let na = fa.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = fb.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine between the batch gradient and the full-data gradient; `None`
/// when either gradient vanishes.
pub fn gradient_alignment<B: Example, D: Example>(
    model: &SoftmaxModel,
    batch: &[B],
    full: &[D],
) -> Result<Option<f64>> {
    Ok(gradient_cosine(&model.gradient(batch)?, &model.gradient(full)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub rho_empirical: f64,
    pub rho_analytic: f64,
    pub sce: f64,
    pub oe: f64,
    /// `None` when a gradient vanished.
    pub grad_cosine: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use crate::synth::{RelationshipInstance, SynthConfig};

    fn scene_ds(labels: &[&[usize]], k: usize) -> Dataset {
        let cfg = SynthConfig { num_relation_classes: k, feature_dim: k + 1, ..Default::default() };
        let scenes = labels
            .iter()
            .enumerate()
            .map(|(s, ls)| {
                let insts = ls
                    .iter()
                    .map(|&l| {
                        let mut f = vec![0.0; k + 1];
                        f[l] = 1.0;
                        RelationshipInstance {
                            id: 0,
                            scene_id: s,
                            subject_class: 0,
                            object_class: 0,
                            relation_label: l,
                            feature: f,
                        }
                    })
                    .collect();
                (s, None, insts)
            })
            .collect();
        Dataset::from_scenes(cfg, scenes).unwrap()
    }

    /// Identity-feature model: logit of class j is `scale * x_j`.
    fn oracle_model(k: usize, scale: f64) -> SoftmaxModel {
        let mut m = SoftmaxModel::zeros(k + 1, k + 1);
        for j in 0..=k {
            m.weights[j][j] = scale;
        }
        m
    }

    #[test]
    fn perfect_scene_recall() {
        let ds = scene_ds(&[&[0, 1, 2, 2]], 2);
        let r = evaluate(&oracle_model(2, 10.0), &ds, &[20], false).unwrap();
        assert_eq!(r.recall_at[&20], 1.0);
        assert_eq!(r.mean_recall_at[&20], 1.0);
        assert_eq!(r.per_class_recall[&20].len(), 2);
    }

    #[test]
    fn mean_recall_is_unweighted_and_mr_averages() {
        // Class 1 is always confused with class 0.
        let ds = scene_ds(&[&[0, 0, 0, 1]], 2);
        let mut m = oracle_model(2, 10.0);
        m.weights[0][1] = 20.0;
        let r = evaluate(&m, &ds, &[20], false).unwrap();
        assert_eq!(r.per_class_recall[&20], BTreeMap::from([(0, 1.0), (1, 0.0)]));
        assert_eq!(r.mean_recall_at[&20], 0.5);
        assert_eq!(r.recall_at[&20], 0.75);
        assert!((r.mr_at[&20] - 0.625).abs() < 1e-12);
    }

    #[test]
    fn top_k_cut_uses_confidence_then_id() {
        // Uniform model: every instance ties; the first K ids are in the cut.
        let ds = scene_ds(&[&[0, 0, 0, 0]], 1);
        let r = evaluate(&SoftmaxModel::zeros(2, 2), &ds, &[1, 2, 4], false).unwrap();
        assert_eq!(r.recall_at[&1], 0.25);
        assert_eq!(r.recall_at[&2], 0.5);
        assert_eq!(r.recall_at[&4], 1.0);
    }

    #[test]
    fn background_unmasking_loses_recall() {
        let ds = scene_ds(&[&[0, 1, 2], &[1, 2]], 2);
        let mut m = oracle_model(2, 5.0);
        m.bias[2] = 6.0;
        let masked = evaluate(&m, &ds, &[20], false).unwrap();
        let open = evaluate(&m, &ds, &[20], true).unwrap();
        assert_eq!(masked.mean_recall_at[&20], 1.0);
        assert_eq!(open.mean_recall_at[&20], 0.0);
        assert!(evaluate(&m, &scene_ds(&[&[2, 2]], 2), &[20], false).is_err());
    }

    #[test]
    fn rows_follow_k_order() {
        let ds = scene_ds(&[&[0, 1]], 2);
        let r = evaluate(&oracle_model(2, 3.0), &ds, &[100, 20, 50], true).unwrap();
        let ks: Vec<usize> = r.rows().iter().map(|row| row.k).collect();
        assert_eq!(ks, vec![20, 50, 100]);
    }

    #[test]
    fn rho_closed_form() {
        let perfect = ConfounderConfig { a1: 1.0, a2: 1.0, var_z: 1.0, var_eps1: 0.0, var_eps2: 0.0 };
        assert_eq!(analytic_rho(&perfect).unwrap(), 1.0);
        let half = ConfounderConfig { var_eps1: 1.0, var_eps2: 1.0, ..perfect.clone() };
        assert_eq!(analytic_rho(&half).unwrap(), 0.5);
        let null = ConfounderConfig { a2: 0.0, ..half.clone() };
        assert_eq!(analytic_rho(&null).unwrap(), 0.0);
        let zero = ConfounderConfig { var_z: 0.0, var_eps1: 0.0, var_eps2: 0.0, ..perfect.clone() };
        assert!(matches!(analytic_rho(&zero), Err(Error::Undefined(_))));
        let r = empirical_rho(&perfect, 1000, &mut stream_rng(0, Stream::Diagnostics)).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    /// Two scene types, two classes, three feature atoms.
    pub(crate) fn hand_world() -> OracleWorld {
        let atom = |prob, l0: f64, x| FeatureAtom { prob, label_probs: vec![l0, 1.0 - l0], feature: vec![x] };
        OracleWorld {
            num_classes: 2,
            scenes: vec![
                SceneType { prob: 0.6, atoms: vec![atom(0.5, 0.9, 0.0), atom(0.5, 0.2, 1.0)] },
                SceneType { prob: 0.4, atoms: vec![atom(1.0, 0.5, 2.0)] },
            ],
        }
    }

    fn hand_classifier() -> FnClassifier<impl Fn(&[f64]) -> Vec<f64>> {
        FnClassifier(|x: &[f64]| match x[0] as usize {
            0 => vec![0.7, 0.3],
            1 => vec![0.4, 0.6],
            _ => vec![1.0, 0.0],
        })
    }

    #[test]
    fn hand_computed_errors() {
        // 1 - (0.3 * 0.66 + 0.3 * 0.56 + 0.4 * 0.5) = 0.434.
        let w = hand_world();
        let c = hand_classifier();
        assert!((sce_estimate(&c, &w).unwrap() - 0.434).abs() < 1e-9);
        assert!((oe_estimate(&c, &w).unwrap() - 0.434).abs() < 1e-9);
    }

    #[test]
    fn perfect_classifier_scores_zero() {
        let atom = |l: usize, x| FeatureAtom {
            prob: 0.5,
            label_probs: if l == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] },
            feature: vec![x],
        };
        let w = OracleWorld {
            num_classes: 2,
            scenes: vec![
                SceneType { prob: 0.5, atoms: vec![atom(0, 0.0), atom(1, 1.0)] },
                SceneType { prob: 0.5, atoms: vec![atom(1, 1.0), atom(0, 0.0)] },
            ],
        };
        let perfect = FnClassifier(|x: &[f64]| if x[0] == 0.0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] });
        assert_eq!(sce_estimate(&perfect, &w).unwrap(), 0.0);
        assert_eq!(oe_estimate(&perfect, &w).unwrap(), 0.0);
    }

    #[test]
    fn bayes_beats_majority() {
        let w = hand_world();
        let bayes = FnClassifier(|x: &[f64]| match x[0] as usize {
            0 => vec![1.0, 0.0],
            1 => vec![0.0, 1.0],
            _ => vec![1.0, 0.0],
        });
        let majority = FnClassifier(|_: &[f64]| vec![1.0, 0.0]);
        assert!(sce_estimate(&bayes, &w).unwrap() <= sce_estimate(&majority, &w).unwrap());
    }

    #[test]
    fn enumeration_order_does_not_matter() {
        let w = hand_world();
        let mut p = w.clone();
        p.scenes.reverse();
        p.scenes[1].atoms.reverse();
        let c = hand_classifier();
        assert!((sce_estimate(&c, &w).unwrap() - sce_estimate(&c, &p).unwrap()).abs() < 1e-12);
        assert!((oe_estimate(&c, &w).unwrap() - oe_estimate(&c, &p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn invalid_worlds_rejected() {
        let mut w = hand_world();
        w.scenes[0].prob = 0.7;
        assert!(matches!(sce_estimate(&hand_classifier(), &w), Err(Error::Input(_))));
    }

    #[test]
    fn alignment_extremes() {
        let mut rng = stream_rng(2, Stream::Diagnostics);
        let model = SoftmaxModel::random(3, 2, 0.5, &mut rng);
        let data: Vec<(Vec<f64>, usize)> =
            (0..12).map(|i| (vec![i as f64 * 0.3, 1.0 - i as f64 * 0.1], i % 3)).collect();
        assert!((gradient_alignment(&model, &data, &data).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let g = model.gradient(&data).unwrap();
        let neg = Gradients {
            weights: g.weights.iter().map(|r| r.iter().map(|v| -v).collect()).collect(),
            bias: g.bias.iter().map(|v| -v).collect(),
        };
        assert!((gradient_cosine(&g, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(gradient_cosine(&g, &Gradients::zeros(3, 2)), None);
    }
}
