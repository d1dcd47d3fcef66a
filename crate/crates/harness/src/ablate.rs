//! One-parameter-at-a-time sweeps over the batch-composition settings.
//!
//! Sweeps run in the order pi, k_prime, alpha, kernel. Each varies a single
//! setting with every other one held at the base config, and each row
//! records that fixed context.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use scenebal_core::classifier::SamplerKind;
use scenebal_core::mis::KernelKind;
use scenebal_core::queryset::{QuerySetConfig, SelectionMode};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::experiment::{run_in_memory, worlds};

/// Per-seed masked-evaluation numbers of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellRuns {
    pub recall: BTreeMap<usize, Vec<f64>>,
    pub mean_recall: BTreeMap<usize, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub sweep: String,
    pub value: String,
    pub fixed: String,
    pub repeats: usize,
    /// `(column, value)` pairs in fixed order.
    #[serde(skip)]
    pub stats: Vec<(String, f64)>,
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub sweep: &'static str,
    pub value: String,
    pub cfg: ExperimentConfig,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

fn fixed_context(cfg: &ExperimentConfig) -> String {
    let kp = match cfg.queryset.selection_mode {
        SelectionMode::ExplicitK => format!("k_prime={}", cfg.queryset.k_prime.unwrap_or(0)),
        SelectionMode::Fraction => format!("target_fraction={}", cfg.queryset.target_fraction.unwrap_or(0.0)),
    };
    let a = &cfg.train.are;
    format!("pi={};{kp};alpha={};lambda={};kernel={}", a.pi, a.alpha, a.lambda, a.kernel)
}

/// Expands the sweeps into cells; the kernel sweep always carries a
/// random-kernel control.
pub fn cells(base: &ExperimentConfig) -> Vec<Cell> {
    let mut base = base.clone();
    base.train.sampler = SamplerKind::Are;
    let mut out = Vec::new();
    for &pi in &base.sweeps.pi {
        let mut c = base.clone();
        c.train.are.pi = pi;
        out.push(Cell { sweep: "pi", value: pi.to_string(), cfg: c });
    }
    for &k in &base.sweeps.k_prime {
        let mut c = base.clone();
        c.queryset = QuerySetConfig::explicit(k);
        out.push(Cell { sweep: "k_prime", value: k.to_string(), cfg: c });
    }
    for &alpha in &base.sweeps.alpha {
        let mut c = base.clone();
        c.train.are.alpha = alpha;
        out.push(Cell { sweep: "alpha", value: alpha.to_string(), cfg: c });
    }
    if !base.sweeps.kernel.is_empty() {
        let mut kernels = base.sweeps.kernel.clone();
        if !kernels.contains(&KernelKind::Random) {
            kernels.push(KernelKind::Random);
        }
        for k in kernels {
            let mut c = base.clone();
            c.train.are.kernel = k;
            out.push(Cell { sweep: "kernel", value: k.tag().to_string(), cfg: c });
        }
    }
    out
}

/// Runs every (cell, seed) pair in parallel. Seeds are `base seed + r` for
/// `r < repeats`, so a cell's numbers do not depend on its neighbours.
pub fn run_cells(base: &ExperimentConfig, cells: &[Cell]) -> Result<Vec<CellRuns>> {
    let jobs: Vec<(usize, u64)> =
        (0..cells.len()).flat_map(|c| (0..base.repeats as u64).map(move |r| (c, r))).collect();
    let results: Vec<(usize, Result<(BTreeMap<usize, f64>, BTreeMap<usize, f64>)>)> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let run = || {
                let mut cfg = cells[c].cfg.with_seed(base.seed + r);
                cfg.train.mask_background_in_eval = Some(true);
                let (train_ds, test) = worlds(&cfg)?;
                let out = run_in_memory(&cfg, &train_ds, &test)?;
                let m = &out.record.metrics[0];
                Ok((m.recall_at.clone(), m.mean_recall_at.clone()))
            };
            (c, run())
        })
        .collect();
    let mut runs: Vec<CellRuns> =
        cells.iter().map(|_| CellRuns { recall: BTreeMap::new(), mean_recall: BTreeMap::new() }).collect();
    for (c, res) in results {
        let (r, mr) = res?;
        for (k, v) in r {
            runs[c].recall.entry(k).or_default().push(v);
        }
        for (k, v) in mr {
            runs[c].mean_recall.entry(k).or_default().push(v);
        }
    }
    Ok(runs)
}

pub fn rows(base: &ExperimentConfig, cells: &[Cell], runs: &[CellRuns]) -> Vec<AblationRow> {
    cells
        .iter()
        .zip(runs)
        .map(|(cell, run)| {
            let mut stats = Vec::new();
            for &k in &base.eval_k_values {
                let r = &run.recall[&k];
                let mr = &run.mean_recall[&k];
                let both: Vec<f64> = r.iter().zip(mr).map(|(a, b)| (a + b) / 2.0).collect();
                for (name, xs) in [("recall", r), ("mean_recall", mr), ("mr", &both)] {
                    let (m, s) = mean_std(xs);
                    stats.push((format!("{name}@{k}_mean"), m));
                    stats.push((format!("{name}@{k}_std"), s));
                }
            }
            AblationRow {
                sweep: cell.sweep.to_string(),
                value: cell.value.clone(),
                fixed: fixed_context(&cell.cfg),
                repeats: base.repeats,
                stats,
            }
        })
        .collect()
}

pub fn write_rows(rows: &[AblationRow], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if let Some(first) = rows.first() {
        let mut header = vec!["sweep".to_string(), "value".into(), "fixed".into(), "repeats".into()];
        header.extend(first.stats.iter().map(|(n, _)| n.clone()));
        w.write_record(&header)?;
    }
    for r in rows {
        let mut rec = vec![r.sweep.clone(), r.value.clone(), r.fixed.clone(), r.repeats.to_string()];
        rec.extend(r.stats.iter().map(|(_, v)| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `ablate`: one CSV per nonempty sweep, `ablation_<sweep>.csv`.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    if cfg.sweeps.is_empty() {
        return Err(crate::error::HarnessError::Config("ablate needs at least one nonempty sweep".into()));
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    let cells = cells(cfg);
    let runs = run_cells(cfg, &cells)?;
    let all = rows(cfg, &cells, &runs);
    let mut written = Vec::new();
    for sweep in ["pi", "k_prime", "alpha", "kernel"] {
        let part: Vec<AblationRow> = all.iter().filter(|r| r.sweep == sweep).cloned().collect();
        if part.is_empty() {
            continue;
        }
        let path = cfg.output_dir.join(format!("ablation_{sweep}.csv"));
        write_rows(&part, &path)?;
        written.push(path);
    }
    Ok(written)
}
