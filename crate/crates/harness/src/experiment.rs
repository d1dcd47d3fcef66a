use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use scenebal_core::classifier::{scene_batches, train, SamplerKind, SoftmaxModel, TrainHistory};
use scenebal_core::metrics::{
    analytic_rho, empirical_rho, evaluate, gradient_alignment, oe_estimate, sce_estimate, DiagnosticsReport,
    FeatureAtom, MetricsReport, OracleWorld, SceneType,
};
use scenebal_core::rng::{stream_rng, Stream};
use scenebal_core::synth::{
    cooccurrence_matrix, generate_test_world, generate_world, io as dsio, relation_histogram, Dataset,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};
use crate::error::{HarnessError, Result};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const DATASET_CONFIG_FILE: &str = "dataset_config.json";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const COOCCURRENCE_FILE: &str = "cooccurrence.csv";
pub const MODEL_FILE: &str = "model.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const PLAN_LOG_FILE: &str = "plan_log.jsonl";
pub const RUN_RECORD_FILE: &str = "run_record.json";

/// Samples used for the correlation diagnostic of a training run.
const RUN_RHO_SAMPLES: usize = 20_000;

/// Model checkpoint as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub step_count: u64,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn model(&self) -> SoftmaxModel {
        SoftmaxModel { weights: self.weights.clone(), bias: self.bias.clone(), step_count: self.step_count }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub sampler: SamplerKind,
    pub metrics: Vec<MetricsReport>,
    pub diagnostics: DiagnosticsReport,
    pub plan_log: Option<PathBuf>,
    /// SHA-256 over the final parameters' bit patterns.
    pub model_digest: String,
    /// SHA-256 over the ordered batch digests and losses.
    pub history_digest: String,
    pub wall_time_s: f64,
}

impl RunRecord {
    /// The record without its timing, for replay comparison.
    pub fn replay_view(&self) -> RunRecord {
        RunRecord { wall_time_s: 0.0, ..self.clone() }
    }
}

/// Trained model, its history and the evaluation reports of one run.
pub struct RunOutput {
    pub model: SoftmaxModel,
    pub history: TrainHistory,
    pub record: RunRecord,
}

pub fn model_digest(model: &SoftmaxModel) -> String {
    let mut h = Sha256::new();
    for v in model.weights.iter().flatten().chain(&model.bias) {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update(model.step_count.to_le_bytes());
    hex(&h.finalize())
}

pub fn history_digest(history: &TrainHistory) -> String {
    let mut h = Sha256::new();
    for b in &history.batches {
        h.update(b.digest.as_bytes());
        h.update(b.loss.to_bits().to_le_bytes());
    }
    hex(&h.finalize())
}

/// Evaluation modes requested by the config: masked, unmasked or both.
pub fn eval_modes(cfg: &ExperimentConfig) -> Vec<bool> {
    match cfg.train.mask_background_in_eval {
        Some(true) => vec![false],
        Some(false) => vec![true],
        None => vec![false, true],
    }
}

pub fn evaluate_all(model: &SoftmaxModel, test: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<MetricsReport>> {
    eval_modes(cfg).into_iter().map(|include_bg| Ok(evaluate(model, test, &cfg.eval_k_values, include_bg)?)).collect()
}

/// Finite world whose scene types are the test scenes (equally likely) and
/// whose feature atoms are their instances with one-hot labels.
pub fn empirical_oracle_world(ds: &Dataset) -> OracleWorld {
    let k1 = ds.num_classes() + 1;
    let p_scene = 1.0 / ds.scenes().len() as f64;
    let scenes = ds
        .scenes()
        .iter()
        .map(|s| {
            let insts = ds.scene_instances(s);
            let p = 1.0 / insts.len() as f64;
            let atoms = insts
                .iter()
                .map(|i| {
                    let mut label_probs = vec![0.0; k1];
                    label_probs[i.relation_label] = 1.0;
                    FeatureAtom { prob: p, label_probs, feature: i.feature.clone() }
                })
                .collect();
            SceneType { prob: p_scene, atoms }
        })
        .collect();
    OracleWorld { num_classes: k1, scenes }
}

pub fn diagnostics(
    model: &SoftmaxModel,
    train_ds: &Dataset,
    test: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<DiagnosticsReport> {
    let cc = &cfg.synth.confounder;
    let mut rng = stream_rng(cfg.seed, Stream::Diagnostics);
    let rho_analytic = analytic_rho(cc).unwrap_or(f64::NAN);
    let rho_empirical = empirical_rho(cc, RUN_RHO_SAMPLES, &mut rng).unwrap_or(f64::NAN);
    let world = empirical_oracle_world(test);
    let batch_ids = &scene_batches(train_ds, cfg.train.batch_size, &mut rng)[0];
    let batch: Vec<_> = batch_ids.iter().map(|&i| train_ds.instance(i)).collect();
    Ok(DiagnosticsReport {
        rho_empirical,
        rho_analytic,
        sce: sce_estimate(model, &world)?,
        oe: oe_estimate(model, &world)?,
        grad_cosine: gradient_alignment(model, &batch, train_ds.instances())?,
    })
}

/// Trains on `train_ds` and evaluates on `test` without touching the disk.
pub fn run_in_memory(cfg: &ExperimentConfig, train_ds: &Dataset, test: &Dataset) -> Result<RunOutput> {
    let start = Instant::now();
    let (model, history) = train(train_ds, &cfg.train, &cfg.queryset)?;
    let metrics = evaluate_all(&model, test, cfg)?;
    let diagnostics = diagnostics(&model, train_ds, test, cfg)?;
    let record = RunRecord {
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        sampler: cfg.train.sampler,
        metrics,
        diagnostics,
        plan_log: None,
        model_digest: model_digest(&model),
        history_digest: history_digest(&history),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutput { model, history, record })
}

/// Generates both worlds from the config.
pub fn worlds(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    Ok((generate_world(&cfg.synth)?, generate_test_world(&cfg.synth, cfg.test_scenes)?))
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::Data(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_histogram(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["label", "count"])?;
    for (label, count) in relation_histogram(ds).iter().enumerate() {
        w.write_record([label.to_string(), count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cooccurrence(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["class_i", "class_j", "count"])?;
    for (i, row) in cooccurrence_matrix(ds).iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            w.write_record([i.to_string(), j.to_string(), c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(reports: &[MetricsReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        for row in r.rows() {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_diagnostics(d: &DiagnosticsReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.serialize(d)?;
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// `generate`: dataset, its config sidecar and the two summary tables.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    let out = &cfg.output_dir;
    create_out(out)?;
    let ds = generate_world(&cfg.synth)?;
    dsio::save_dataset(&ds, &out.join(DATASET_FILE), &out.join(DATASET_CONFIG_FILE))?;
    write_histogram(&ds, &out.join(HISTOGRAM_FILE))?;
    write_cooccurrence(&ds, &out.join(COOCCURRENCE_FILE))?;
    Ok(ds)
}

/// Uses the dataset in the output directory when present, otherwise
/// generates it from the config.
fn training_world(cfg: &ExperimentConfig) -> Result<Dataset> {
    let data = cfg.output_dir.join(DATASET_FILE);
    let sidecar = cfg.output_dir.join(DATASET_CONFIG_FILE);
    if data.exists() && sidecar.exists() {
        let ds = dsio::load_dataset(&data, &sidecar)?;
        if ds.config != cfg.synth {
            return Err(HarnessError::Data(format!("{} was generated from a different world config", data.display())));
        }
        return Ok(ds);
    }
    Ok(generate_world(&cfg.synth)?)
}

/// `train`: checkpoint, metrics, diagnostics, plan log and run record.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let out = &cfg.output_dir;
    create_out(out)?;
    let train_ds = training_world(cfg)?;
    let test = generate_test_world(&cfg.synth, cfg.test_scenes)?;
    let RunOutput { model, history, mut record } = run_in_memory(cfg, &train_ds, &test)?;
    if cfg.train.sampler == SamplerKind::Are {
        let path = out.join(PLAN_LOG_FILE);
        history.write_plan_log(BufWriter::new(File::create(&path)?))?;
        record.plan_log = Some(PathBuf::from(PLAN_LOG_FILE));
    }
    let ckpt = Checkpoint {
        weights: model.weights.clone(),
        bias: model.bias.clone(),
        step_count: model.step_count,
        config_hash: record.config_hash.clone(),
    };
    write_json(&ckpt, &out.join(MODEL_FILE))?;
    write_metrics(&record.metrics, &out.join(METRICS_FILE))?;
    write_diagnostics(&record.diagnostics, &out.join(DIAGNOSTICS_FILE))?;
    write_json(&record, &out.join(RUN_RECORD_FILE))?;
    Ok(record)
}

/// `eval`: re-evaluates the checkpoint in the output directory.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<Vec<MetricsReport>> {
    let path = cfg.output_dir.join(MODEL_FILE);
    let text =
        fs::read_to_string(&path).map_err(|e| HarnessError::Data(format!("cannot read {}: {e}", path.display())))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    let test = generate_test_world(&cfg.synth, cfg.test_scenes)?;
    let reports = evaluate_all(&ckpt.model(), &test, cfg)?;
    write_metrics(&reports, &cfg.output_dir.join("eval_metrics.csv"))?;
    Ok(reports)
}
