//! Verification experiments. Each check returns a machine-readable verdict.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use scenebal_core::classifier::{train, SamplerKind, SoftmaxModel, TrainConfig, INIT_STD};
use scenebal_core::metrics::{
    analytic_rho, empirical_rho, evaluate, gradient_alignment, oe_estimate, sce_estimate, FeatureAtom, FnClassifier,
    OracleWorld, SceneType,
};
use scenebal_core::mis::KernelKind;
use scenebal_core::queryset::QuerySetConfig;
use scenebal_core::rng::{stream_rng, Stream};
use scenebal_core::synth::{
    generate_test_world, generate_world, BayesOracle, CountRange, Dataset, RelationshipInstance, SynthConfig,
};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Theorem1,
    Theorem2,
    Theorem3,
    Assumption1,
    Assumption2,
    Rho,
    SceOe,
    GradAlign,
    ForeBack,
}

impl Check {
    pub const ALL: [Check; 9] = [
        Check::Theorem1,
        Check::Theorem2,
        Check::Theorem3,
        Check::Assumption1,
        Check::Assumption2,
        Check::Rho,
        Check::SceOe,
        Check::GradAlign,
        Check::ForeBack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Theorem1 => "theorem1",
            Check::Theorem2 => "theorem2",
            Check::Theorem3 => "theorem3",
            Check::Assumption1 => "assumption1",
            Check::Assumption2 => "assumption2",
            Check::Rho => "rho",
            Check::SceOe => "sce_oe",
            Check::GradAlign => "grad_align",
            Check::ForeBack => "fore_back",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown check {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub pass: bool,
    pub statistic: f64,
    pub threshold: f64,
    pub n: usize,
    /// Secondary statistics behind the verdict.
    pub details: BTreeMap<String, f64>,
}

impl Verdict {
    fn new(check: Check, pass: bool, statistic: f64, threshold: f64, n: usize) -> Self {
        Self { check: check.name().into(), pass, statistic, threshold, n, details: BTreeMap::new() }
    }

    fn detail(mut self, key: &str, v: f64) -> Self {
        self.details.insert(key.into(), v);
        self
    }
}

/// One-sided sign test: `P(X >= wins)` for `X ~ Binomial(wins + losses, 1/2)`.
/// Ties must be dropped by the caller.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = (wins + losses) as u64;
    if wins == 0 || n == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n).expect("valid binomial");
    b.sf(wins as u64 - 1)
}

/// Counts strict wins and losses of `a` over `b`, dropping ties.
pub fn paired_sign(a: &[f64], b: &[f64]) -> (usize, usize) {
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let losses = a.iter().zip(b).filter(|(x, y)| x < y).count();
    (wins, losses)
}

/// Three-class Gaussian world with no background and no co-occurrence, so
/// labels are independent of the scene confounder.
pub fn theorem_world(seed: u64, class_weights: [f64; 3], num_scenes: usize) -> SynthConfig {
    SynthConfig {
        num_relation_classes: 3,
        num_object_classes: 4,
        feature_dim: 8,
        class_weights: Some(class_weights.to_vec()),
        pairs_per_class: 4,
        cooccurrence_strength: 0.0,
        num_scenes,
        relations_per_scene: CountRange { min: 10, max: 10 },
        background_fraction: 0.0,
        class_mean_separation: 2.5,
        class_noise_std: 1.0,
        seed,
        ..Default::default()
    }
}

pub fn full_batch_config(ds: &Dataset, seed: u64) -> TrainConfig {
    TrainConfig { learning_rate: 1.0, epochs: 100, batch_size: ds.instances().len(), seed, ..Default::default() }
}

pub fn balanced_batch_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        epochs: 100,
        batch_size: 30,
        sampler: SamplerKind::Balanced,
        seed,
        ..Default::default()
    }
}

fn fg_argmax(model: &SoftmaxModel, x: &[f64], k: usize) -> Result<usize> {
    let p = model.probabilities(x)?;
    Ok(scenebal_core::metrics::scored_prediction(&p, k, false).0)
}

/// Fraction of `test` instances on which the model's foreground argmax
/// equals the analytic Bayes prediction.
pub fn bayes_agreement(model: &SoftmaxModel, cfg: &SynthConfig, test: &Dataset, balanced_prior: bool) -> Result<f64> {
    let oracle = BayesOracle::new(cfg, balanced_prior)?;
    let k = cfg.num_relation_classes;
    let mut agree = 0usize;
    for inst in test.instances() {
        if fg_argmax(model, &inst.feature, k)? == oracle.predict(&inst.feature)? {
            agree += 1;
        }
    }
    Ok(agree as f64 / test.instances().len() as f64)
}

/// Foreground-argmax accuracy on instances of one class.
pub fn class_recall(model: &SoftmaxModel, test: &Dataset, class: usize) -> Result<f64> {
    let k = test.num_classes();
    let insts: Vec<&RelationshipInstance> = test.instances().iter().filter(|i| i.relation_label == class).collect();
    if insts.is_empty() {
        return Err(HarnessError::Data(format!("no test instances of class {class}")));
    }
    let mut hits = 0usize;
    for i in &insts {
        if fg_argmax(model, &i.feature, k)? == class {
            hits += 1;
        }
    }
    Ok(hits as f64 / insts.len() as f64)
}

fn agreement_run(seed: u64, balanced_batches: bool) -> Result<f64> {
    let cfg = theorem_world(seed, [1.0, 1.0, 1.0], 300);
    let ds = generate_world(&cfg)?;
    let test = generate_test_world(&cfg, 300)?;
    let tc = if balanced_batches { balanced_batch_config(seed) } else { full_batch_config(&ds, seed) };
    let (model, _) = train(&ds, &tc, &QuerySetConfig::default())?;
    bayes_agreement(&model, &cfg, &test, false)
}

pub fn verify_theorem1(cfg: &ExperimentConfig) -> Result<Verdict> {
    let a = agreement_run(cfg.seed, false)?;
    Ok(Verdict::new(Check::Theorem1, a >= 0.95, a, 0.95, 3000))
}

/// Tail-class recall of the imbalanced baseline and of balanced batches on
/// the same 100:10:1 world.
pub fn imbalance_pair(seed: u64) -> Result<(f64, f64)> {
    let cfg = theorem_world(seed, [100.0, 10.0, 1.0], 300);
    let ds = generate_world(&cfg)?;
    let test = generate_test_world(&cfg, 1000)?;
    let balanced = balanced_batch_config(seed);
    let baseline = TrainConfig { sampler: SamplerKind::Baseline, ..balanced.clone() };
    let q = QuerySetConfig::default();
    let (mb, _) = train(&ds, &baseline, &q)?;
    let (ms, _) = train(&ds, &balanced, &q)?;
    Ok((class_recall(&mb, &test, 2)?, class_recall(&ms, &test, 2)?))
}

pub fn verify_theorem2(cfg: &ExperimentConfig) -> Result<Verdict> {
    let a = agreement_run(cfg.seed, true)?;
    let seeds: Vec<u64> = (0..cfg.verify.seeds as u64).map(|s| cfg.seed + s).collect();
    let pairs = seeds.par_iter().map(|&s| imbalance_pair(s)).collect::<Result<Vec<_>>>()?;
    let (base, bal): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let (wins, losses) = paired_sign(&bal, &base);
    let p = sign_test_p(wins, losses);
    let pass = a >= 0.95 && p < 0.05;
    Ok(Verdict::new(Check::Theorem2, pass, a, 0.95, 3000)
        .detail("sign_test_p", p)
        .detail("tail_recall_baseline_mean", base.iter().sum::<f64>() / base.len() as f64)
        .detail("tail_recall_balanced_mean", bal.iter().sum::<f64>() / bal.len() as f64)
        .detail("seeds", seeds.len() as f64))
}

/// Mean over batches of the coefficient of variation of per-class
/// foreground counts.
pub fn mean_batch_cv(history: &scenebal_core::classifier::TrainHistory) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for b in &history.batches {
        let k = b.class_counts.len() as f64;
        let m = b.class_counts.iter().sum::<usize>() as f64 / k;
        if m == 0.0 {
            continue;
        }
        let var = b.class_counts.iter().map(|&c| (c as f64 - m).powi(2)).sum::<f64>() / k;
        total += var.sqrt() / m;
        n += 1;
    }
    total / n as f64
}

/// Per-seed batch CV of baseline and loss-driven batches over one epoch.
pub fn balance_pair(cfg: &ExperimentConfig, seed: u64) -> Result<(f64, f64)> {
    let c = cfg.with_seed(seed);
    let ds = generate_world(&c.synth)?;
    let base = TrainConfig { epochs: 1, sampler: SamplerKind::Baseline, ..c.train.clone() };
    let are = TrainConfig { sampler: SamplerKind::Are, ..base.clone() };
    let (_, hb) = train(&ds, &base, &c.queryset)?;
    let (_, ha) = train(&ds, &are, &c.queryset)?;
    Ok((mean_batch_cv(&hb), mean_batch_cv(&ha)))
}

pub fn verify_theorem3(cfg: &ExperimentConfig) -> Result<Verdict> {
    let seeds: Vec<u64> = (0..cfg.verify.seeds as u64).map(|s| cfg.seed + s).collect();
    let pairs = seeds.par_iter().map(|&s| balance_pair(cfg, s)).collect::<Result<Vec<_>>>()?;
    let (base, are): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let (wins, losses) = paired_sign(&base, &are);
    let p = sign_test_p(wins, losses);
    let mb = base.iter().sum::<f64>() / base.len() as f64;
    let ma = are.iter().sum::<f64>() / are.len() as f64;
    Ok(Verdict::new(Check::Theorem3, p < 0.05, p, 0.05, seeds.len()).detail("cv_baseline", mb).detail("cv_are", ma))
}

fn random_batch<R: Rng>(rng: &mut R, labels: usize, dim: usize) -> Vec<(Vec<f64>, usize)> {
    let n = rng.random_range(2..=30);
    (0..n).map(|_| ((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(), rng.random_range(0..labels))).collect()
}

/// Over `trials` random batches: whenever the excluded class's mean loss
/// differs from the batch mean, the loss without that class differs too.
pub fn assumption1_fraction(seed: u64, trials: usize) -> Result<(f64, usize)> {
    let mut rng = stream_rng(seed, Stream::Diagnostics);
    let (mut holds, mut applicable) = (0usize, 0usize);
    for _ in 0..trials {
        let model = SoftmaxModel::random(4, 5, 1.0, &mut rng);
        let batch = random_batch(&mut rng, 4, 5);
        let q = batch.choose(&mut rng).expect("nonempty").1;
        if batch.iter().all(|e| e.1 == q) {
            continue;
        }
        let losses = model.losses(&batch)?;
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        let cls: Vec<f64> = batch.iter().zip(&losses).filter(|(e, _)| e.1 == q).map(|(_, l)| *l).collect();
        let class_mean = cls.iter().sum::<f64>() / cls.len() as f64;
        if class_mean == mean {
            continue;
        }
        applicable += 1;
        if model.loss_excluding_class(&batch, q)? != mean {
            holds += 1;
        }
    }
    Ok((holds as f64 / applicable.max(1) as f64, applicable))
}

/// Gradient of one batch recomputed after every other batch is rewritten.
pub fn assumption2_fraction(seed: u64, trials: usize) -> Result<f64> {
    let mut rng = stream_rng(seed, Stream::Diagnostics);
    let mut identical = 0usize;
    for _ in 0..trials {
        let model = SoftmaxModel::random(4, 5, 1.0, &mut rng);
        let mut batches: Vec<Vec<(Vec<f64>, usize)>> = (0..4).map(|_| random_batch(&mut rng, 4, 5)).collect();
        let before: Vec<u64> = model.gradient(&batches[0])?.flatten().iter().map(|v| v.to_bits()).collect();
        for b in batches.iter_mut().skip(1) {
            for e in b.iter_mut() {
                e.0.iter_mut().for_each(|x| *x = -*x * 3.0);
                e.1 = (e.1 + 1) % 4;
            }
        }
        let after: Vec<u64> = model.gradient(&batches[0])?.flatten().iter().map(|v| v.to_bits()).collect();
        if before == after {
            identical += 1;
        }
    }
    Ok(identical as f64 / trials as f64)
}

pub fn verify_assumption1(cfg: &ExperimentConfig) -> Result<Verdict> {
    let (frac, n) = assumption1_fraction(cfg.seed, 1000)?;
    Ok(Verdict::new(Check::Assumption1, frac == 1.0, frac, 1.0, n))
}

pub fn verify_assumption2(cfg: &ExperimentConfig) -> Result<Verdict> {
    let frac = assumption2_fraction(cfg.seed, 1000)?;
    Ok(Verdict::new(Check::Assumption2, frac == 1.0, frac, 1.0, 1000))
}

pub fn verify_rho(cfg: &ExperimentConfig) -> Result<Verdict> {
    let cc = &cfg.synth.confounder;
    let n = cfg.verify.rho_samples;
    let analytic = analytic_rho(cc)?;
    let empirical = empirical_rho(cc, n, &mut stream_rng(cfg.seed, Stream::Diagnostics))?;
    let gap = (empirical - analytic).abs();
    Ok(Verdict::new(Check::Rho, gap <= 0.05, gap, 0.05, n).detail("analytic", analytic).detail("empirical", empirical))
}

/// Two scene types, two classes, three feature atoms; the reference
/// classifier below scores 0.434 on both errors.
pub fn reference_world() -> OracleWorld {
    let atom = |prob, l0: f64, x| FeatureAtom { prob, label_probs: vec![l0, 1.0 - l0], feature: vec![x] };
    OracleWorld {
        num_classes: 2,
        scenes: vec![
            SceneType { prob: 0.6, atoms: vec![atom(0.5, 0.9, 0.0), atom(0.5, 0.2, 1.0)] },
            SceneType { prob: 0.4, atoms: vec![atom(1.0, 0.5, 2.0)] },
        ],
    }
}

pub fn reference_prediction(x: &[f64]) -> Vec<f64> {
    match x[0] as usize {
        0 => vec![0.7, 0.3],
        1 => vec![0.4, 0.6],
        _ => vec![1.0, 0.0],
    }
}

pub const REFERENCE_ERROR: f64 = 0.434;

/// Noiseless variant of [`reference_world`] with one-hot labels.
pub fn noiseless_world() -> OracleWorld {
    let mut w = reference_world();
    for s in &mut w.scenes {
        for a in &mut s.atoms {
            a.label_probs = if a.feature[0] == 1.0 { vec![0.0, 1.0] } else { vec![1.0, 0.0] };
        }
    }
    w
}

pub fn perfect_prediction(x: &[f64]) -> Vec<f64> {
    if x[0] == 1.0 {
        vec![0.0, 1.0]
    } else {
        vec![1.0, 0.0]
    }
}

pub fn verify_sce_oe(cfg: &ExperimentConfig) -> Result<Verdict> {
    let w = reference_world();
    let c = FnClassifier(reference_prediction);
    let sce = sce_estimate(&c, &w)?;
    let oe = oe_estimate(&c, &w)?;
    let p = FnClassifier(perfect_prediction);
    let nw = noiseless_world();
    let (psce, poe) = (sce_estimate(&p, &nw)?, oe_estimate(&p, &nw)?);
    let gap = (sce - oe).abs();
    let exact = (sce - REFERENCE_ERROR).abs() <= 1e-9 && (oe - REFERENCE_ERROR).abs() <= 1e-9;
    let pass = exact && psce == 0.0 && poe == 0.0 && gap <= cfg.verify.delta;
    Ok(Verdict::new(Check::SceOe, pass, gap, cfg.verify.delta, 3)
        .detail("sce", sce)
        .detail("oe", oe)
        .detail("perfect_sce", psce)
        .detail("perfect_oe", poe))
}

/// Paired cosines to the full-data gradient: a batch with `m` instances of
/// every label against a same-size batch of one random label.
pub fn alignment_trials(ds: &Dataset, seed: u64, trials: usize, per_label: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let model = SoftmaxModel::random(
        ds.num_classes() + 1,
        ds.config.feature_dim,
        INIT_STD,
        &mut stream_rng(seed, Stream::Init),
    );
    let mut rng = stream_rng(seed, Stream::Diagnostics);
    let mut by_label: Vec<Vec<&RelationshipInstance>> = vec![Vec::new(); ds.num_classes() + 1];
    for i in ds.instances() {
        by_label[i.relation_label].push(i);
    }
    by_label.retain(|v| !v.is_empty());
    let size = per_label * by_label.len();
    let full = ds.instances();
    let (mut bal, mut pure) = (Vec::with_capacity(trials), Vec::with_capacity(trials));
    for _ in 0..trials {
        let mut balanced: Vec<&RelationshipInstance> = Vec::with_capacity(size);
        for v in &by_label {
            for _ in 0..per_label {
                balanced.push(v.choose(&mut rng).expect("nonempty"));
            }
        }
        let label = by_label.choose(&mut rng).expect("labels present");
        let single: Vec<&RelationshipInstance> =
            (0..size).map(|_| *label.choose(&mut rng).expect("nonempty")).collect();
        bal.push(gradient_alignment(&model, &balanced, full)?.unwrap_or(0.0));
        pure.push(gradient_alignment(&model, &single, full)?.unwrap_or(0.0));
    }
    Ok((bal, pure))
}

pub fn verify_grad_align(cfg: &ExperimentConfig) -> Result<Verdict> {
    let ds = generate_world(&cfg.synth)?;
    let (bal, pure) = alignment_trials(&ds, cfg.seed, cfg.verify.trials, 4)?;
    let (wins, losses) = paired_sign(&bal, &pure);
    let p = sign_test_p(wins, losses);
    Ok(Verdict::new(Check::GradAlign, p < 0.05, p, 0.05, cfg.verify.trials)
        .detail("cosine_balanced_mean", bal.iter().sum::<f64>() / bal.len() as f64)
        .detail("cosine_pure_mean", pure.iter().sum::<f64>() / pure.len() as f64))
}

/// Training variant compared in the directional experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    Are(KernelKind),
}

impl Variant {
    pub fn label(self) -> String {
        match self {
            Variant::Baseline => "baseline".into(),
            Variant::Are(k) => format!("are/{k}"),
        }
    }
}

/// Masked and unmasked scores of one trained model at one K.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub recall: f64,
    pub mean_recall: f64,
    pub mean_recall_with_bg: f64,
}

/// `scores[v][s]`: variant `v` trained and evaluated on seed `seeds[s]`;
/// all variants of a seed share its worlds.
pub fn compare_variants(
    cfg: &ExperimentConfig,
    variants: &[Variant],
    seeds: &[u64],
    k: usize,
) -> Result<Vec<Vec<Scores>>> {
    let per_seed = seeds
        .par_iter()
        .map(|&seed| {
            let c = cfg.with_seed(seed);
            let ds = generate_world(&c.synth)?;
            let test = generate_test_world(&c.synth, c.test_scenes)?;
            variants
                .iter()
                .map(|v| {
                    let mut tc = c.train.clone();
                    match v {
                        Variant::Baseline => tc.sampler = SamplerKind::Baseline,
                        Variant::Are(kernel) => {
                            tc.sampler = SamplerKind::Are;
                            tc.are.kernel = *kernel;
                        }
                    }
                    let (model, _) = train(&ds, &tc, &c.queryset)?;
                    let masked = evaluate(&model, &test, &[k], false)?;
                    let open = evaluate(&model, &test, &[k], true)?;
                    Ok(Scores {
                        recall: masked.recall_at[&k],
                        mean_recall: masked.mean_recall_at[&k],
                        mean_recall_with_bg: open.mean_recall_at[&k],
                    })
                })
                .collect::<Result<Vec<Scores>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..variants.len()).map(|v| per_seed.iter().map(|s| s[v]).collect()).collect())
}

pub fn mean_of(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn verify_fore_back(cfg: &ExperimentConfig) -> Result<Verdict> {
    let seeds: Vec<u64> = (0..cfg.repeats as u64).map(|s| cfg.seed + s).collect();
    let k = cfg.eval_k_values[0];
    let variants = [Variant::Baseline, Variant::Are(cfg.train.are.kernel)];
    let scores = compare_variants(cfg, &variants, &seeds, k)?;
    let masked = mean_of(scores[0].iter().map(|s| s.mean_recall));
    let open = mean_of(scores[0].iter().map(|s| s.mean_recall_with_bg));
    let are_open = mean_of(scores[1].iter().map(|s| s.mean_recall_with_bg));
    let drop = if masked > 0.0 { 1.0 - open / masked } else { 0.0 };
    Ok(Verdict::new(Check::ForeBack, drop >= 0.5 && are_open > open, drop, 0.5, seeds.len())
        .detail("baseline_masked_mr", masked)
        .detail("baseline_unmasked_mr", open)
        .detail("are_unmasked_mr", are_open))
}

pub fn run_check(cfg: &ExperimentConfig, check: Check) -> Result<Verdict> {
    match check {
        Check::Theorem1 => verify_theorem1(cfg),
        Check::Theorem2 => verify_theorem2(cfg),
        Check::Theorem3 => verify_theorem3(cfg),
        Check::Assumption1 => verify_assumption1(cfg),
        Check::Assumption2 => verify_assumption2(cfg),
        Check::Rho => verify_rho(cfg),
        Check::SceOe => verify_sce_oe(cfg),
        Check::GradAlign => verify_grad_align(cfg),
        Check::ForeBack => verify_fore_back(cfg),
    }
}
