use std::collections::VecDeque;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SoftmaxModel;
use crate::are::{assemble_batch, plan_batch, AreConfig, ClassLossTracker, PlanRecord};
use crate::error::{Error, Result};
use crate::queryset::{build_query_set, QuerySetConfig};
use crate::rng::{stream_rng, Stream, StreamRng};
use crate::synth::{Dataset, RelationshipInstance};

/// Standard deviation of the initial weights.
pub const INIT_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Scene-contiguous batches in shuffled scene order.
    Baseline,
    /// Baseline batches recomposed from the previous batches' losses.
    Are,
    /// Equal instance count per label in every batch, minority labels
    /// cycled with reshuffling.
    Balanced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub sampler: SamplerKind,
    pub are: AreConfig,
    pub seed: u64,
    /// `None` evaluates both with and without the background output.
    pub mask_background_in_eval: Option<bool>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 5,
            batch_size: 32,
            sampler: SamplerKind::Baseline,
            are: AreConfig::default(),
            seed: 0,
            mask_background_in_eval: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if self.batch_size == 0 || self.batch_size > ds.instances().len() {
            return Err(Error::config(format!(
                "batch_size must lie in 1..={}, got {}",
                ds.instances().len(),
                self.batch_size
            )));
        }
        self.are.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    /// Instances the gradient step was taken on.
    pub size: usize,
    pub loss: f64,
    /// Foreground count per class in the trained batch.
    pub class_counts: Vec<usize>,
    pub background: usize,
    pub added: usize,
    /// SHA-256 of the trained instance ids.
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub batches: Vec<BatchRecord>,
    pub epochs: Vec<EpochRecord>,
    pub plan_log: Vec<PlanRecord>,
}

impl TrainHistory {
    pub fn write_plan_log<W: Write>(&self, mut out: W) -> Result<()> {
        for rec in &self.plan_log {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn batch_digest<'a, I: IntoIterator<Item = &'a RelationshipInstance>>(batch: I) -> String {
    let mut h = Sha256::new();
    for inst in batch {
        h.update((inst.id as u64).to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Scenes in shuffled order, instances kept scene-contiguous, cut into
/// chunks of `batch_size` (the last one may be short).
pub fn scene_batches(ds: &Dataset, batch_size: usize, rng: &mut StreamRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..ds.scenes().len()).collect();
    order.shuffle(rng);
    let ids: Vec<usize> = order.into_iter().flat_map(|s| ds.scenes()[s].span.clone()).collect();
    ids.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Class-balanced batches: each batch holds `batch_size / L` instances of
/// every one of the `L` labels present, and an epoch has as many batches as
/// a scene-ordered epoch would.
pub fn balanced_batches(ds: &Dataset, batch_size: usize, rng: &mut StreamRng) -> Vec<Vec<usize>> {
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes() + 1];
    for inst in ds.instances() {
        by_label[inst.relation_label].push(inst.id);
    }
    by_label.retain(|v| !v.is_empty());
    let per_label = (batch_size / by_label.len()).max(1);
    let num_batches = ds.instances().len().div_ceil(batch_size);
    let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); by_label.len()];
    let mut batches = Vec::with_capacity(num_batches);
    for _ in 0..num_batches {
        let mut batch = Vec::with_capacity(per_label * by_label.len());
        for (ids, q) in by_label.iter().zip(&mut queues) {
            for _ in 0..per_label {
                if q.is_empty() {
                    let mut fresh = ids.clone();
                    fresh.shuffle(rng);
                    q.extend(fresh);
                }
                batch.push(q.pop_front().expect("refilled"));
            }
        }
        batches.push(batch);
    }
    batches
}

fn accuracy(model: &SoftmaxModel, ds: &Dataset) -> Result<f64> {
    let mut hits = 0usize;
    for inst in ds.instances() {
        let z = model.logits(&inst.feature)?;
        if crate::synth::argmax_lowest(&z) == inst.relation_label {
            hits += 1;
        }
    }
    Ok(hits as f64 / ds.instances().len() as f64)
}

/// Trains a fresh model on `ds`. Randomness comes from the init, shuffle and
/// sampling streams of `cfg.seed`; the query set is only built for the
/// loss-driven sampler.
pub fn train(ds: &Dataset, cfg: &TrainConfig, qcfg: &QuerySetConfig) -> Result<(SoftmaxModel, TrainHistory)> {
    cfg.validate(ds)?;
    let k = ds.num_classes();
    let bg = ds.background_label();
    let mut model =
        SoftmaxModel::random(k + 1, ds.config.feature_dim, INIT_STD, &mut stream_rng(cfg.seed, Stream::Init));
    let mut shuffle_rng = stream_rng(cfg.seed, Stream::Shuffle);
    let mut sample_rng = stream_rng(cfg.seed, Stream::Sampling);

    let mut are_state = match cfg.sampler {
        SamplerKind::Are => {
            let qs = build_query_set(ds, qcfg)?;
            let tracker = ClassLossTracker::new(&qs.classes(), cfg.are.initial_loss(k));
            Some((qs, tracker))
        }
        _ => None,
    };

    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let batches = match cfg.sampler {
            SamplerKind::Balanced => balanced_batches(ds, cfg.batch_size, &mut shuffle_rng),
            _ => scene_batches(ds, cfg.batch_size, &mut shuffle_rng),
        };
        let (mut loss_sum, mut stepped) = (0.0, 0usize);
        for (b, ids) in batches.iter().enumerate() {
            let base: Vec<&RelationshipInstance> = ids.iter().map(|&id| ds.instance(id)).collect();
            let (trained, added) = match &mut are_state {
                Some((qs, tracker)) => {
                    let fg = base.iter().filter(|i| i.relation_label != bg).count();
                    let rec = plan_batch(tracker, qs, &cfg.are, fg, epoch, b)?;
                    let kernel = cfg.are.kernel.bind(Some(&model))?;
                    let out = assemble_batch(&base, bg, &rec.plan(), qs, &kernel, &mut sample_rng)?;
                    history.plan_log.push(rec);
                    let added = out.count(crate::are::Provenance::Added);
                    (out.instances(), added)
                }
                None => (base, 0),
            };
            // An all-background scene batch keeps no background when nothing
            // is added; there is nothing to learn from.
            if trained.is_empty() {
                continue;
            }
            let (losses, grads) = model.loss_and_gradient(&trained)?;
            if let Some((_, tracker)) = &mut are_state {
                let eval: Vec<(usize, f64)> =
                    trained.iter().map(|i| i.relation_label).zip(losses.iter().copied()).collect();
                tracker.update(&eval)?;
            }
            model.sgd_step(&grads, cfg.learning_rate);
            let loss = losses.iter().sum::<f64>() / losses.len() as f64;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss at epoch {epoch}, batch {b}")));
            }
            loss_sum += loss;
            stepped += 1;
            let mut class_counts = vec![0usize; k];
            let mut background = 0;
            for i in &trained {
                match class_counts.get_mut(i.relation_label) {
                    Some(c) => *c += 1,
                    None => background += 1,
                }
            }
            history.batches.push(BatchRecord {
                epoch,
                batch: b,
                size: trained.len(),
                loss,
                class_counts,
                background,
                added,
                digest: batch_digest(trained.iter().copied()),
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            mean_loss: if stepped > 0 { loss_sum / stepped as f64 } else { f64::NAN },
            train_accuracy: accuracy(&model, ds)?,
        });
    }
    Ok((model, history))
}
