use std::path::{Path, PathBuf};

use scenebal_core::classifier::TrainConfig;
use scenebal_core::mis::KernelKind;
use scenebal_core::queryset::QuerySetConfig;
use scenebal_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweeps {
    pub pi: Vec<f64>,
    pub k_prime: Vec<usize>,
    pub alpha: Vec<f64>,
    pub kernel: Vec<KernelKind>,
}

impl Sweeps {
    pub fn is_empty(&self) -> bool {
        self.pi.is_empty() && self.k_prime.is_empty() && self.alpha.is_empty() && self.kernel.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Tolerance of the `|SCE - OE|` membership check.
    pub delta: f64,
    /// Seeds for the statistical checks.
    pub seeds: usize,
    /// Paired trials of the gradient-alignment check.
    pub trials: usize,
    /// Sample size of the correlation check.
    pub rho_samples: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { delta: 0.1, seeds: 20, trials: 100, rho_samples: 100_000 }
    }
}

/// Everything one CLI invocation needs. `seed` is the root seed and is
/// copied into the world and training sections before use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub queryset: QuerySetConfig,
    pub train: TrainConfig,
    pub eval_k_values: Vec<usize>,
    /// Scenes in the held-out evaluation world.
    pub test_scenes: usize,
    pub sweeps: Sweeps,
    pub repeats: usize,
    pub output_dir: PathBuf,
    pub verify: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthConfig::default(),
            queryset: QuerySetConfig::default(),
            train: TrainConfig::default(),
            eval_k_values: vec![20, 50, 100],
            test_scenes: 300,
            sweeps: Sweeps::default(),
            repeats: 3,
            output_dir: PathBuf::from("out"),
            verify: VerifyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Copies the root seed into the sections that consume randomness.
    pub fn resolved(mut self) -> Self {
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
        self
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }.resolved()
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.queryset.validate(self.synth.num_relation_classes)?;
        self.train.are.validate()?;
        if self.eval_k_values.is_empty() || self.eval_k_values.contains(&0) {
            return Err(HarnessError::Config("eval_k_values must be nonempty and positive".into()));
        }
        if self.repeats == 0 {
            return Err(HarnessError::Config("repeats must be at least 1".into()));
        }
        if self.test_scenes == 0 {
            return Err(HarnessError::Config("test_scenes must be positive".into()));
        }
        for &pi in &self.sweeps.pi {
            if !(pi >= 0.0) {
                return Err(HarnessError::Config(format!("sweep value pi = {pi} is negative")));
            }
        }
        for &a in &self.sweeps.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(HarnessError::Config(format!("sweep value alpha = {a} is invalid")));
            }
        }
        for &k in &self.sweeps.k_prime {
            QuerySetConfig::explicit(k).validate(self.synth.num_relation_classes)?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (sorted keys) with the output
    /// directory left out.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let canonical = serde_json::to_string(&serde_json::to_value(&c)?)?;
        Ok(hex(&Sha256::digest(canonical.as_bytes())))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses a `--set` value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key just written"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies `a.b.c=value` to a TOML table, creating intermediate tables.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(HarnessError::Config(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("override key {key:?} crosses non-table {part:?}")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

pub fn from_table(table: Table) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        Value::Table(table).try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a config file (or defaults when `path` is `None`) and applies the
/// overrides in order.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| HarnessError::Config(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<Table>().map_err(|e| HarnessError::Config(e.to_string()))?
        }
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    from_table(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use scenebal_core::classifier::SamplerKind;

    #[test]
    fn overrides_nest_and_type() {
        let mut t = Table::new();
        apply_override(&mut t, "train.are.pi=2.5").unwrap();
        apply_override(&mut t, "train.sampler=are").unwrap();
        apply_override(&mut t, "synth.num_scenes = 40").unwrap();
        apply_override(&mut t, "eval_k_values=[5, 10]").unwrap();
        let cfg = from_table(t).unwrap();
        assert_eq!(cfg.train.are.pi, 2.5);
        assert_eq!(cfg.train.sampler, SamplerKind::Are);
        assert_eq!(cfg.synth.num_scenes, 40);
        assert_eq!(cfg.eval_k_values, vec![5, 10]);
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        let mut t = Table::new();
        assert!(matches!(apply_override(&mut t, "novalue"), Err(HarnessError::Config(_))));
        apply_override(&mut t, "synth.bogus=1").unwrap();
        assert!(matches!(from_table(t), Err(HarnessError::Config(_))));
        let mut t = Table::new();
        apply_override(&mut t, "synth.num_relation_classes=0").unwrap();
        let err = from_table(t).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn root_seed_propagates() {
        let cfg = ExperimentConfig::default().with_seed(42);
        assert_eq!(cfg.synth.seed, 42);
        assert_eq!(cfg.train.seed, 42);
    }

    #[test]
    fn hash_ignores_field_order_and_output_dir() {
        let a = "seed = 3\n[train]\nepochs = 2\nbatch_size = 16\n".parse::<Table>().unwrap();
        let b = "[train]\nbatch_size = 16\nepochs = 2\n[synth]\n\nseed = 9\n".parse::<Table>().unwrap();
        let ca = from_table(a).unwrap();
        let mut cb = from_table(b).unwrap();
        cb.seed = 3;
        let mut cb = cb.resolved();
        assert_eq!(ca.hash().unwrap(), cb.hash().unwrap());
        cb.output_dir = PathBuf::from("elsewhere");
        assert_eq!(ca.hash().unwrap(), cb.hash().unwrap());
        cb.train.epochs = 3;
        assert_ne!(ca.hash().unwrap(), cb.hash().unwrap());
    }
}
