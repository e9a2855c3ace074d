//! Run configuration: one TOML document with a section per pipeline stage.

use std::path::{Path, PathBuf};

use diffmia::attack::ScoreTransform;
use diffmia::datagen::{split_sizes_with, DatasetKind, Dims};
use diffmia::diffusion::DiffusionConfig;
use diffmia::eval::alpha_grid;
use diffmia::ndcore::SgdConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub diffusion: DiffusionSection,
    pub attack: AttackSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub paths: PathsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    pub n: usize,
    /// `[channels, height, width]`.
    pub dims: [usize; 3],
    pub seed: u64,
    pub split_seed: u64,
    /// Share of the nonmembers that goes to the attacker's public set.
    pub public_fraction: f64,
    /// Member count; half of `n` when absent.
    #[serde(default)]
    pub members: Option<usize>,
}

impl DatasetSection {
    pub fn dims(&self) -> Dims {
        Dims::new(self.dims[0], self.dims[1], self.dims[2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSection {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub width: usize,
    pub depth: usize,
    pub embed_width: usize,
    pub init_seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    pub train: SgdConfig,
}

impl DiffusionSection {
    pub fn model(&self) -> DiffusionConfig {
        DiffusionConfig {
            steps: self.steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            width: self.width,
            depth: self.depth,
            embed_width: self.embed_width,
        }
    }
}

fn default_log_every() -> usize {
    500
}

/// Log-spaced quantile levels the regressor heads are trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            lo: 1e-5,
            hi: 0.5,
            points: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    /// Levels reported in decision CSVs and checked for calibration.
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Scoring step; `T/2` when absent.
    #[serde(default)]
    pub score_t: Option<usize>,
    #[serde(default = "default_score_batch")]
    pub score_batch: usize,
    /// Target parameter counts, one weak-attacker size each. The first is
    /// the primary attacker.
    #[serde(default = "default_trunk_params")]
    pub trunk_params: Vec<usize>,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    pub m: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub transform: ScoreTransform,
    #[serde(default)]
    pub grid: GridSection,
    pub train: SgdConfig,
}

fn default_alphas() -> Vec<f64> {
    vec![0.01, 0.05, 0.1]
}

fn default_score_batch() -> usize {
    64
}

fn default_trunk_params() -> Vec<usize> {
    vec![5666]
}

fn default_blocks() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub fpr_targets: Vec<f64>,
    /// Number of bag trainings averaged; run `i` uses master seed
    /// `attack.master_seed + i`.
    pub seeds: usize,
    /// Runs used for per-example verdict variance (the first `repetitions`
    /// seeds).
    pub repetitions: usize,
    pub ablation_m: Vec<usize>,
    pub variance_alpha: f64,
    pub hist_bins: usize,
    /// Significance level for the member-vs-holdout rank test.
    pub significance: f64,
    /// Coverage of the binomial acceptance interval for FPR calibration.
    pub interval_level: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            fpr_targets: vec![0.1, 0.01, 0.001],
            seeds: 5,
            repetitions: 5,
            ablation_m: vec![1, 3, 5, 7],
            variance_alpha: 0.1,
            hist_bins: 40,
            significance: 0.01,
            interval_level: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub workspace: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("workspace"),
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::validation(msg)
}

fn check_level(what: &str, a: f64) -> CliResult<()> {
    if !(a > 0.0 && a < 1.0) {
        return Err(bad(format!("{what} must lie in (0, 1), got {a}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| bad(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn score_t(&self) -> usize {
        self.attack.score_t.unwrap_or(self.diffusion.steps / 2)
    }

    /// Quantile levels every weak attacker is trained on: the log grid plus
    /// the decision levels, FPR targets, and the variance level.
    pub fn heads(&self) -> CliResult<Vec<f64>> {
        let mut extra = self.attack.alphas.clone();
        extra.extend(&self.eval.fpr_targets);
        extra.push(self.eval.variance_alpha);
        let g = &self.attack.grid;
        Ok(alpha_grid(g.lo, g.hi, g.points, &extra)?)
    }

    /// Checks every section before any stage runs.
    pub fn validate(&self) -> CliResult<()> {
        let d = &self.dataset;
        self.dataset.dims().validate()?;
        split_sizes_with(d.n, d.members, d.public_fraction)?;

        let f = &self.diffusion;
        if f.steps < 2 {
            return Err(bad(format!("diffusion T must be at least 2, got {}", f.steps)));
        }
        if !(f.beta_start > 0.0 && f.beta_start <= f.beta_end && f.beta_end < 1.0) {
            return Err(bad(format!(
                "diffusion betas must satisfy 0 < start <= end < 1, got {} and {}",
                f.beta_start, f.beta_end
            )));
        }
        if f.width == 0 || f.embed_width < 2 || !f.embed_width.is_multiple_of(2) {
            return Err(bad("diffusion width must be positive and embed_width even"));
        }
        f.train.validate()?;

        let a = &self.attack;
        let t = self.score_t();
        if t == 0 || t >= f.steps {
            return Err(bad(format!("score_t must lie in [1, {}], got {t}", f.steps - 1)));
        }
        if a.alphas.is_empty() {
            return Err(bad("attack.alphas must not be empty"));
        }
        for &x in &a.alphas {
            check_level("attack alpha", x)?;
        }
        if a.trunk_params.is_empty() || a.trunk_params.contains(&0) {
            return Err(bad("attack.trunk_params must be non-empty and positive"));
        }
        if a.m == 0 {
            return Err(bad("attack.m must be at least 1"));
        }
        if a.score_batch == 0 || a.blocks == 0 {
            return Err(bad("attack.score_batch and attack.blocks must be positive"));
        }
        a.train.validate()?;

        let e = &self.eval;
        if e.fpr_targets.is_empty() {
            return Err(bad("eval.fpr_targets must not be empty"));
        }
        for &x in &e.fpr_targets {
            check_level("fpr target", x)?;
        }
        check_level("variance_alpha", e.variance_alpha)?;
        check_level("significance", e.significance)?;
        check_level("interval_level", e.interval_level)?;
        if e.seeds == 0 {
            return Err(bad("eval.seeds must be at least 1"));
        }
        if e.repetitions < 2 || e.repetitions > e.seeds {
            return Err(bad(format!(
                "eval.repetitions must lie in [2, seeds = {}], got {}",
                e.seeds, e.repetitions
            )));
        }
        if e.ablation_m.is_empty() || e.ablation_m.windows(2).any(|w| w[0] >= w[1]) || e.ablation_m[0] == 0 {
            return Err(bad("eval.ablation_m must be positive and strictly increasing"));
        }
        if *e.ablation_m.last().unwrap() > a.m {
            return Err(bad(format!("eval.ablation_m may not exceed attack.m = {}", a.m)));
        }
        if e.hist_bins == 0 {
            return Err(bad("eval.hist_bins must be positive"));
        }
        self.heads()?;
        Ok(())
    }
}
