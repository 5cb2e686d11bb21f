//! Experiment configuration. Every field has a default so a config only
//! needs to name what it changes, and the resolved value (defaults filled
//! in, env path joined to the config's directory) is echoed into
//! `report.json`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pglab_core::envs::grid::GridConfig;
use pglab_core::EnvSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Pgd,
    Psgd,
    KlScan,
    FdCheck,
    DpOracle,
    SeqLemma,
    SeqDecomp,
    Sweep,
}

impl Experiment {
    pub fn needs_env(self) -> bool {
        self != Experiment::SeqLemma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    /// The family's default feasible point.
    Template,
    /// A uniform feasible draw from the run seed.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub iters: usize,
    /// Mini-batch for PSGD, and the path count behind the gradient of PGD on
    /// Monte Carlo families.
    pub batch: usize,
    /// Fixed smoothness constant. Estimated from random feasible pairs when absent.
    pub smoothness: Option<f64>,
    pub smoothness_pairs: usize,
    pub smoothness_batch: usize,
    pub smoothness_seed: u64,
    /// Exact PGD with an estimated L doubles L and restarts whenever the
    /// objective rises.
    pub smoothness_backoff: bool,
    pub tolerance: f64,
    /// PSGD evaluates the objective every this many iterations.
    pub eval_every: usize,
    pub start: Start,
    /// Absolute suboptimality that counts as converged. When set, a final
    /// gap above it fails the run.
    pub target_gap: Option<f64>,
    /// Fraction of the PSGD evaluations, counted from the end, averaged into
    /// the plateau gap.
    pub plateau_fraction: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            iters: 1000,
            batch: 1000,
            smoothness: None,
            smoothness_pairs: 200,
            smoothness_batch: 100_000,
            smoothness_seed: 0,
            smoothness_backoff: true,
            tolerance: 1e-10,
            eval_every: 10,
            start: Start::Random,
            target_gap: None,
            plateau_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlScanConfig {
    pub samples: usize,
    /// KL constant to test. The family's closed-form constant when absent.
    pub mu: Option<f64>,
    pub eta: f64,
    pub batch: usize,
    pub stat_k: f64,
    pub denominator_floor: f64,
    pub include_optimum: bool,
}

impl Default for KlScanConfig {
    fn default() -> Self {
        KlScanConfig {
            samples: 200,
            mu: None,
            eta: 1e-6,
            batch: 20_000,
            stat_k: 5.0,
            denominator_floor: 1e-12,
            include_optimum: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdCheckConfig {
    pub points: usize,
    /// Minimum slack of the sampled points to every constraint.
    pub margin: Option<f64>,
    /// Central-difference step. Defaults to 1e-6 for exact families and
    /// 0.05 for Monte Carlo ones.
    pub step: Option<f64>,
    pub batch: usize,
    /// Largest accepted relative error for exact gradients.
    pub tolerance: f64,
    /// Largest accepted z-score for Monte Carlo gradients.
    pub stat_k: f64,
}

impl Default for FdCheckConfig {
    fn default() -> Self {
        FdCheckConfig { points: 10, margin: None, step: None, batch: 100_000, tolerance: 1e-6, stat_k: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpOracleConfig {
    pub grid: GridConfig,
    pub mc_paths: usize,
    pub stat_k: f64,
}

impl Default for DpOracleConfig {
    fn default() -> Self {
        DpOracleConfig { grid: GridConfig::ORACLE, mc_paths: 1_000_000, stat_k: 3.0 }
    }
}

/// `(M_g, G, T)`.
pub type LemmaPoint = (f64, f64, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeqLemmaConfig {
    /// Number of random premise-valid instances.
    pub random: usize,
    pub max_horizon: usize,
    pub hard: Vec<LemmaPoint>,
    pub weak: Vec<LemmaPoint>,
}

impl Default for SeqLemmaConfig {
    fn default() -> Self {
        SeqLemmaConfig {
            random: 10_000,
            max_horizon: 12,
            hard: vec![(2.0, 2.0, 8), (4.0, 4.0, 16)],
            weak: vec![(2.0, 2.0, 5)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeqDecompConfig {
    pub points: usize,
    pub grid: GridConfig,
    pub batch: usize,
    pub stat_k: f64,
}

impl Default for SeqDecompConfig {
    fn default() -> Self {
        SeqDecompConfig { points: 20, grid: GridConfig::EVAL, batch: 100_000, stat_k: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Batch,
    Horizon,
    Iters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub experiment: Experiment,
    pub axis: Axis,
    pub values: Vec<usize>,
    /// Per-seed metric aggregated at each point. Defaults to the plateau gap
    /// for PSGD and the final gap otherwise.
    #[serde(default)]
    pub metric: Option<String>,
}

impl SweepConfig {
    pub fn metric(&self) -> &str {
        match (&self.metric, self.experiment) {
            (Some(m), _) => m,
            (None, Experiment::Psgd) => "plateau_gap",
            (None, _) => "final_gap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Environment JSON, relative to the config file.
    pub env: Option<PathBuf>,
    pub experiment: Experiment,
    pub optimizer: OptimizerConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub kl_scan: KlScanConfig,
    pub fd_check: FdCheckConfig,
    pub dp_oracle: DpOracleConfig,
    pub seq_lemma: SeqLemmaConfig,
    pub seq_decomp: SeqDecompConfig,
    pub sweep: Option<SweepConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: None,
            experiment: Experiment::Pgd,
            optimizer: OptimizerConfig::default(),
            seeds: vec![0],
            output_dir: PathBuf::from("out"),
            kl_scan: KlScanConfig::default(),
            fd_check: FdCheckConfig::default(),
            dp_oracle: DpOracleConfig::default(),
            seq_lemma: SeqLemmaConfig::default(),
            seq_decomp: SeqDecompConfig::default(),
            sweep: None,
        }
    }
}

/// Parses JSON, reporting failures as `path:line:column: message`.
pub fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| anyhow::anyhow!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
}

impl RunConfig {
    /// Reads and validates a config. The env path is resolved against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig = parse_json(path, &text)?;
        if let Some(env) = &cfg.env {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.env = Some(base.join(env));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        let experiment = match (&self.sweep, self.experiment) {
            (Some(s), Experiment::Sweep) => s.experiment,
            (None, Experiment::Sweep) => bail!("experiment \"sweep\" needs a sweep section"),
            (_, e) => e,
        };
        if experiment == Experiment::Sweep {
            bail!("a sweep cannot sweep another sweep");
        }
        if experiment.needs_env() && self.env.is_none() {
            bail!("experiment {experiment:?} needs an env file");
        }
        let o = &self.optimizer;
        if o.batch == 0 || o.eval_every == 0 {
            bail!("optimizer batch and eval_every must be positive");
        }
        if let Some(l) = o.smoothness {
            if !(l > 0.0 && l.is_finite()) {
                bail!("smoothness must be positive and finite, got {l}");
            }
        }
        if !(o.plateau_fraction > 0.0 && o.plateau_fraction <= 1.0) {
            bail!("plateau_fraction must lie in (0, 1], got {}", o.plateau_fraction);
        }
        Ok(())
    }

    /// Loads the referenced environment, naming the path on failure.
    pub fn load_env(&self) -> Result<EnvSpec> {
        let path = self.env.as_ref().context("no env file given")?;
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read env file {}", path.display()))?;
        parse_json(path, &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_takes_every_default() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_fields_are_rejected_with_position() {
        let err = parse_json::<RunConfig>(Path::new("c.json"), "{\n  \"experimnt\": \"pgd\"\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("c.json:2:"), "{msg}");
        assert!(msg.contains("experimnt"), "{msg}");
    }

    #[test]
    fn experiment_names_are_kebab_case() {
        let cfg: RunConfig = serde_json::from_str(r#"{"experiment": "kl-scan"}"#).unwrap();
        assert_eq!(cfg.experiment, Experiment::KlScan);
        assert!(serde_json::from_str::<RunConfig>(r#"{"experiment": "kl_scan"}"#).is_err());
    }

    #[test]
    fn shipped_configs_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut n = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "json") {
                let cfg = RunConfig::load(&path).unwrap();
                cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                if cfg.env.is_some() {
                    cfg.load_env().unwrap().build().unwrap();
                }
                n += 1;
            }
        }
        assert!(n >= 10);
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig { experiment: Experiment::SeqLemma, ..RunConfig::default() };
        cfg.validate().unwrap();
        cfg.experiment = Experiment::Pgd;
        assert!(cfg.validate().is_err());
        cfg.experiment = Experiment::Sweep;
        assert!(cfg.validate().is_err());
        cfg.sweep =
            Some(SweepConfig { experiment: Experiment::SeqLemma, axis: Axis::Iters, values: vec![1], metric: None });
        cfg.validate().unwrap();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
    }
}
