use std::path::Path;
use std::process::{Command, Output};

fn scenebal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scenebal")).args(args).output().expect("binary runs")
}

const SMALL: [&str; 6] = ["--set", "synth.num_scenes=150", "--set", "train.epochs=1", "--set", "test_scenes=60"];

fn with_small<'a>(mut args: Vec<&'a str>) -> Vec<&'a str> {
    args.extend(SMALL);
    args
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(str::to_string).collect()];
    rows.extend(r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()));
    rows
}

#[test]
fn generate_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = scenebal(&with_small(vec!["generate", "--seed", "7", "--out", d.path().to_str().unwrap()]));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let data = std::fs::read(a.path().join("dataset.jsonl")).unwrap();
    assert_eq!(data, std::fs::read(b.path().join("dataset.jsonl")).unwrap());
    let lines = data.split(|&c| c == b'\n').filter(|l| !l.is_empty()).count();
    let hist = csv_rows(&a.path().join("histogram.csv"));
    let total: usize = hist[1..].iter().map(|r| r[1].parse::<usize>().unwrap()).sum();
    assert_eq!(lines, total);
    assert!(a.path().join("cooccurrence.csv").exists());
    assert!(a.path().join("dataset_config.json").exists());
}

#[test]
fn invalid_config_exits_one() {
    let d = tempfile::tempdir().unwrap();
    let out = scenebal(&["generate", "--out", d.path().to_str().unwrap(), "--set", "synth.background_fraction=1.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("background_fraction"));
    let out = scenebal(&["verify", "no_such_check"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn corrupt_dataset_exits_two() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path().to_str().unwrap();
    assert!(scenebal(&with_small(vec!["generate", "--out", dir])).status.success());
    std::fs::write(d.path().join("dataset.jsonl"), "{not json\n").unwrap();
    let out = scenebal(&with_small(vec!["train", "--out", dir]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_then_eval_agree() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path().to_str().unwrap();
    let out = scenebal(&with_small(vec!["train", "--out", dir, "--set", "train.sampler=are"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = csv_rows(&d.path().join("metrics.csv"));
    // Masking unset: one masked and one unmasked report, three K values each.
    assert_eq!(metrics.len(), 1 + 6);
    assert!(d.path().join("plan_log.jsonl").exists());
    assert!(scenebal(&with_small(vec!["eval", "--out", dir])).status.success());
    assert_eq!(csv_rows(&d.path().join("eval_metrics.csv")), metrics);
}

#[test]
fn baseline_run_has_same_schema_without_plan_log() {
    let d = tempfile::tempdir().unwrap();
    let out =
        scenebal(&with_small(vec!["train", "--out", d.path().to_str().unwrap(), "--set", "train.sampler=baseline"]));
    assert!(out.status.success());
    assert!(!d.path().join("plan_log.jsonl").exists());
    let rec: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.path().join("run_record.json")).unwrap()).unwrap();
    for key in ["config_hash", "seed", "metrics", "diagnostics", "plan_log", "wall_time_s"] {
        assert!(rec.get(key).is_some(), "{key}");
    }
}

fn ablate(dir: &str, sweeps: &[&str]) -> Output {
    let mut args = with_small(vec!["ablate", "--out", dir, "--set", "repeats=2"]);
    args.extend(sweeps);
    scenebal(&args)
}

#[test]
fn ablation_tables() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let out =
        ablate(a.path().to_str().unwrap(), &["--set", "sweeps.pi=[1.0, 3.0]", "--set", "sweeps.kernel=[\"mis\"]"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pi = csv_rows(&a.path().join("ablation_pi.csv"));
    assert_eq!(pi.len(), 3);
    assert_eq!(&pi[0][..4], ["sweep", "value", "fixed", "repeats"]);
    assert!(pi[0].contains(&"mean_recall@20_mean".to_string()) && pi[0].contains(&"mean_recall@20_std".to_string()));
    let kernel = csv_rows(&a.path().join("ablation_kernel.csv"));
    assert!(kernel.iter().any(|r| r[1] == "rnd"));

    // The pi = 3 cell does not depend on which other cells ran.
    let out = ablate(b.path().to_str().unwrap(), &["--set", "sweeps.pi=[3.0]"]);
    assert!(out.status.success());
    let alone = csv_rows(&b.path().join("ablation_pi.csv"));
    assert_eq!(alone[1], pi[2]);

    let c = tempfile::tempdir().unwrap();
    assert_eq!(ablate(c.path().to_str().unwrap(), &[]).status.code(), Some(1));
}

#[test]
fn verify_emits_verdict_json() {
    let out = scenebal(&["verify", "assumption2"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["check"], "assumption2");
    assert_eq!(v["pass"], true);
    for key in ["statistic", "threshold", "n"] {
        assert!(v.get(key).is_some());
    }
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/verify.toml");
    let out = scenebal(&["verify", "rho", "--config", cfg.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["details"]["analytic"], 0.5);
    assert_eq!(v["pass"], true);
}

#[test]
fn failing_verdict_exits_three() {
    // No gap can be at most a negative tolerance.
    let out = scenebal(&["verify", "sce_oe", "--set", "verify.delta=-1.0"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["pass"], false);
    assert_eq!(out.status.code(), Some(3));
}
