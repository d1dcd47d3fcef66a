use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use scenebal::config::{self, ExperimentConfig};
use scenebal::{ablate, experiment, verify, Check, HarnessError};

#[derive(Parser)]
#[command(name = "scenebal", version, about = "Synthetic scene-graph batch-composition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key.path=value` override, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training world and its summary tables.
    Generate(Common),
    /// Train one model and write checkpoint, metrics and run record.
    Train(Common),
    /// Re-evaluate the checkpoint in the output directory.
    Eval(Common),
    /// Run the configured sweeps.
    Ablate(Common),
    /// Run one verification check and print its verdict as JSON.
    Verify {
        /// theorem1, theorem2, theorem3, assumption1, assumption2, rho, sce_oe, grad_align or fore_back
        check: String,
        #[command(flatten)]
        common: Common,
    },
}

fn load(c: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut overrides = c.set.clone();
    if let Some(seed) = c.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &c.out {
        overrides.push(format!("output_dir={:?}", out.display().to_string()));
    }
    config::load(c.config.as_deref(), &overrides)
}

enum Outcome {
    Done,
    Failed,
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = load(&c)?;
            let ds = experiment::cmd_generate(&cfg)?;
            println!("wrote {} instances to {}", ds.instances().len(), cfg.output_dir.display());
        }
        Command::Train(c) => {
            let cfg = load(&c)?;
            let rec = experiment::cmd_train(&cfg)?;
            for m in &rec.metrics {
                for row in m.rows() {
                    println!(
                        "bg={} R@{}={:.4} mR@{}={:.4}",
                        row.background_included, row.k, row.recall, row.k, row.mean_recall
                    );
                }
            }
        }
        Command::Eval(c) => {
            let cfg = load(&c)?;
            for m in experiment::cmd_eval(&cfg)? {
                for row in m.rows() {
                    println!(
                        "bg={} R@{}={:.4} mR@{}={:.4}",
                        row.background_included, row.k, row.recall, row.k, row.mean_recall
                    );
                }
            }
        }
        Command::Ablate(c) => {
            let cfg = load(&c)?;
            for p in ablate::cmd_ablate(&cfg)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Verify { check, common } => {
            let check: Check = check.parse()?;
            let cfg = load(&common)?;
            let v = verify::run_check(&cfg, check)?;
            println!("{}", serde_json::to_string(&v).context("serializing verdict")?);
            if !v.pass {
                return Ok(Outcome::Failed);
            }
        }
    }
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<HarnessError>().map_or(2, |h| h.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
