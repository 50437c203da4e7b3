use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fmo_core::solver::SolverConfig;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Temporal super-resolution factor.
    pub l: usize,
    pub epsilon: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { l: 8, epsilon: 1.0 }
    }
}

/// Run configuration shared by every subcommand. Only `version` is
/// required; everything else has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub version: u32,
    #[serde(default = "default_dataset")]
    pub dataset: PathBuf,
    #[serde(default = "default_canvas")]
    pub canvas: [usize; 2],
    #[serde(default = "default_n_gt")]
    pub n_gt: usize,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Store solve wall-clock times and report them in `wall_time_s`. Off
    /// by default so reruns produce identical files.
    #[serde(default)]
    pub record_time: bool,
}

fn default_dataset() -> PathBuf {
    PathBuf::from("data")
}

fn default_canvas() -> [usize; 2] {
    [64, 64]
}

fn default_n_gt() -> usize {
    fmo_core::synth::DEFAULT_SUBFRAMES
}

fn default_count() -> usize {
    20
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            version: CONFIG_VERSION,
            dataset: default_dataset(),
            canvas: default_canvas(),
            n_gt: default_n_gt(),
            count: default_count(),
            seed: 0,
            solver: SolverConfig::default(),
            eval: EvalConfig::default(),
            record_time: false,
        }
    }
}

impl BenchConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: BenchConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate().with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            bail!("unsupported config version {} (expected {CONFIG_VERSION})", self.version);
        }
        if self.canvas.contains(&0) || self.n_gt == 0 || self.count == 0 || self.eval.l == 0 {
            bail!("canvas, n_gt, count and eval.l must all be at least 1");
        }
        if !(self.eval.epsilon > 0.0 && self.eval.epsilon <= 1.0) {
            bail!("eval.epsilon must lie in (0, 1], got {}", self.eval.epsilon);
        }
        self.solver.validate()?;
        Ok(())
    }
}
