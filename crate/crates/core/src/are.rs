//! Active reverse estimation: per-class losses from the previous batches
//! decide how many query-set instances each class adds to the next batch and
//! how much background that batch may keep.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mis::{Kernel, KernelKind};
use crate::queryset::QuerySet;
use crate::synth::RelationshipInstance;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AreConfig {
    pub alpha: f64,
    pub lambda: f64,
    /// Background-to-foreground ratio; `inf` keeps all background.
    pub pi: f64,
    pub kernel: KernelKind,
    /// Loss assumed for classes not yet observed; `ln K` when unset.
    pub loss_init: Option<f64>,
}

impl Default for AreConfig {
    fn default() -> Self {
        Self { alpha: 0.2, lambda: 0.01, pi: 3.0, kernel: KernelKind::Mis, loss_init: None }
    }
}

impl AreConfig {
    pub fn validate(&self) -> Result<()> {
        check_nonneg("alpha", self.alpha)?;
        check_nonneg("lambda", self.lambda)?;
        if !(self.pi >= 0.0) {
            return Err(Error::config(format!("pi must be nonnegative, got {}", self.pi)));
        }
        if let Some(l) = self.loss_init {
            if !l.is_finite() {
                return Err(Error::config("loss_init must be finite"));
            }
        }
        Ok(())
    }

    pub fn initial_loss(&self, num_classes: usize) -> f64 {
        self.loss_init.unwrap_or_else(|| (num_classes as f64).ln())
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::config(format!("{name} must be finite and nonnegative, got {v}")));
    }
    Ok(())
}

/// Last observed mean loss of every query-set class.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassLossTracker {
    losses: BTreeMap<usize, f64>,
    observed: BTreeMap<usize, bool>,
}

impl ClassLossTracker {
    pub fn new(classes: &[usize], loss_init: f64) -> Self {
        Self {
            losses: classes.iter().map(|&c| (c, loss_init)).collect(),
            observed: classes.iter().map(|&c| (c, false)).collect(),
        }
    }

    pub fn losses(&self) -> &BTreeMap<usize, f64> {
        &self.losses
    }

    pub fn loss(&self, class: usize) -> Option<f64> {
        self.losses.get(&class).copied()
    }

    pub fn observed(&self, class: usize) -> bool {
        self.observed.get(&class).copied().unwrap_or(false)
    }

    /// Sets each tracked class present in `batch_eval` (class, loss) to its
    /// mean loss there; other classes keep their previous value.
    pub fn update(&mut self, batch_eval: &[(usize, f64)]) -> Result<()> {
        if let Some((c, l)) = batch_eval.iter().find(|(_, l)| !l.is_finite()) {
            return Err(Error::Numeric(format!("non-finite loss {l} for class {c}")));
        }
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for &(c, l) in batch_eval {
            if self.losses.contains_key(&c) {
                let e = sums.entry(c).or_insert((0.0, 0));
                e.0 += l;
                e.1 += 1;
            }
        }
        for (c, (s, n)) in sums {
            self.losses.insert(c, s / n as f64);
            self.observed.insert(c, true);
        }
        Ok(())
    }
}

/// `P_k = exp(-alpha L_k) / sum_j exp(-alpha L_j)`.
pub fn query_probabilities(losses: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_nonneg("alpha", alpha)?;
    if losses.is_empty() {
        return Ok(Vec::new());
    }
    let scaled: Vec<f64> = losses.iter().map(|l| -alpha * l).collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scaled.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / z).collect())
}

pub fn query_distribution(tracker: &ClassLossTracker, alpha: f64) -> Result<BTreeMap<usize, f64>> {
    let (classes, losses): (Vec<usize>, Vec<f64>) = tracker.losses().iter().map(|(c, l)| (*c, *l)).unzip();
    Ok(classes.into_iter().zip(query_probabilities(&losses, alpha)?).collect())
}

fn round_half_up(x: f64) -> usize {
    if x.is_infinite() {
        return usize::MAX;
    }
    // Saturating float-to-int cast.
    (x + 0.5).floor() as usize
}

/// `n_k = round(lambda * P_k * |Q_k|)`.
pub fn sampling_sizes(probs: &[f64], lambda: f64, pool_sizes: &[usize]) -> Result<Vec<usize>> {
    check_nonneg("lambda", lambda)?;
    if probs.len() != pool_sizes.len() {
        return Err(Error::input(format!("{} probabilities for {} pools", probs.len(), pool_sizes.len())));
    }
    Ok(probs.iter().zip(pool_sizes).map(|(p, &q)| round_half_up(lambda * p * q as f64)).collect())
}

/// `round(pi * (sum(plan_counts) + fg_count))`.
pub fn background_budget(plan_counts: &[usize], fg_count: usize, pi: f64) -> usize {
    let total = plan_counts.iter().sum::<usize>() + fg_count;
    if total == 0 {
        return 0;
    }
    round_half_up(pi * total as f64)
}

/// Uniform subset of size `min(|bg|, budget)`, in the original order.
pub fn retain_background<T: Clone, R: Rng + ?Sized>(bg: &[T], budget: usize, rng: &mut R) -> Vec<T> {
    if budget >= bg.len() {
        return bg.to_vec();
    }
    let mut idx = rand::seq::index::sample(rng, bg.len(), budget).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| bg[i].clone()).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub add_counts: BTreeMap<usize, usize>,
    pub bg_budget: usize,
    pub fg_in_batch: usize,
}

impl SamplingPlan {
    pub fn total_added(&self) -> usize {
        self.add_counts.values().sum()
    }
}

/// One line of the plan log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub t: usize,
    pub b: usize,
    pub losses: BTreeMap<usize, f64>,
    pub probs: BTreeMap<usize, f64>,
    pub add_counts: BTreeMap<usize, usize>,
    pub bg_budget: usize,
    pub fg_in_batch: usize,
}

impl PlanRecord {
    pub fn plan(&self) -> SamplingPlan {
        SamplingPlan { add_counts: self.add_counts.clone(), bg_budget: self.bg_budget, fg_in_batch: self.fg_in_batch }
    }
}

/// Builds the plan for a batch holding `fg_in_batch` foreground instances
/// from the tracker state alone.
pub fn plan_batch(
    tracker: &ClassLossTracker,
    qs: &QuerySet,
    cfg: &AreConfig,
    fg_in_batch: usize,
    t: usize,
    b: usize,
) -> Result<PlanRecord> {
    let probs = query_distribution(tracker, cfg.alpha)?;
    let classes: Vec<usize> = probs.keys().copied().collect();
    let pool_sizes = classes.iter().map(|&c| qs.pool_size(c)).collect::<Result<Vec<_>>>()?;
    let p: Vec<f64> = probs.values().copied().collect();
    let counts = sampling_sizes(&p, cfg.lambda, &pool_sizes)?;
    let bg_budget = background_budget(&counts, fg_in_batch, cfg.pi);
    Ok(PlanRecord {
        t,
        b,
        losses: tracker.losses().clone(),
        probs,
        add_counts: classes.into_iter().zip(counts).collect(),
        bg_budget,
        fg_in_batch,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Added,
    RetainedBackground,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssembledBatch<'a> {
    pub items: Vec<(&'a RelationshipInstance, Provenance)>,
}

impl<'a> AssembledBatch<'a> {
    pub fn instances(&self) -> Vec<&'a RelationshipInstance> {
        self.items.iter().map(|(i, _)| *i).collect()
    }

    pub fn count(&self, p: Provenance) -> usize {
        self.items.iter().filter(|(_, q)| *q == p).count()
    }
}

/// `retained background ∪ original foreground ∪ drawn additions`.
///
/// Base-batch order is kept (dropped background removed), followed by the
/// additions class by class.
pub fn assemble_batch<'a, R: Rng + ?Sized>(
    base: &[&'a RelationshipInstance],
    background_label: usize,
    plan: &SamplingPlan,
    qs: &mut QuerySet<'a>,
    kernel: &Kernel,
    rng: &mut R,
) -> Result<AssembledBatch<'a>> {
    let bg_positions: Vec<usize> =
        base.iter().enumerate().filter(|(_, i)| i.relation_label == background_label).map(|(p, _)| p).collect();
    let kept: BTreeSet<usize> = retain_background(&bg_positions, plan.bg_budget, rng).into_iter().collect();
    let mut items: Vec<(&'a RelationshipInstance, Provenance)> = base
        .iter()
        .enumerate()
        .filter_map(|(p, inst)| {
            if inst.relation_label != background_label {
                Some((*inst, Provenance::Original))
            } else if kept.contains(&p) {
                Some((*inst, Provenance::RetainedBackground))
            } else {
                None
            }
        })
        .collect();
    for (&class, &n) in &plan.add_counts {
        if n > 0 {
            items.extend(qs.draw(class, n, kernel, rng)?.into_iter().map(|i| (i, Provenance::Added)));
        }
    }
    Ok(AssembledBatch { items })
}
