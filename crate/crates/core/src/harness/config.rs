use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contrastive::ContrastiveConfig;
use crate::dgp::{GapConfig, GpOutcomeSpec, LatentMode};
use crate::error::{Error, Result};
use crate::estimators::{AltMinConfig, EstimatorKind};
use crate::nn::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    Linear,
    Gp,
    Flow,
}

impl DgpKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DgpKind::Linear => "linear",
            DgpKind::Gp => "gp",
            DgpKind::Flow => "flow",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorMode {
    /// True simulator inverse maps.
    #[default]
    Oracle,
    /// Cross-map for linear covariates, contrastive training for flows.
    Learned,
}

fn default_low() -> f64 {
    0.1
}
fn default_high() -> f64 {
    0.4
}
fn default_n_train() -> usize {
    1000
}
fn default_n_sim() -> usize {
    1000
}
fn default_n_test() -> usize {
    500
}
fn default_n_z() -> usize {
    10
}
fn default_gamma_w() -> f64 {
    0.4
}
fn default_lambda_tau() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.05
}
fn default_flow_layers() -> usize {
    2
}
fn default_threads() -> usize {
    1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_estimators() -> Vec<EstimatorKind> {
    EstimatorKind::ALL.to_vec()
}

/// The nine gap cells over `{0, low, high}` used for the standard table.
pub fn default_gap_grid(low: f64, high: f64, gamma_w: f64) -> Result<Vec<GapConfig>> {
    let (l, h) = (low, high);
    [
        (0.0, h, h),
        (l, l, l),
        (l, l, h),
        (l, h, l),
        (l, h, h),
        (h, l, l),
        (h, l, h),
        (h, h, l),
        (h, h, h),
    ]
    .into_iter()
    .map(|(r, rs, tau)| GapConfig::new(r, rs, tau)?.with_gamma_w(gamma_w))
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub dgp_kind: DgpKind,
    pub seeds: Vec<u64>,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_sim")]
    pub n_sim: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_n_z")]
    pub n_z: usize,
    #[serde(default = "default_low")]
    pub low: f64,
    #[serde(default = "default_high")]
    pub high: f64,
    #[serde(default = "default_gamma_w")]
    pub gamma_w: f64,
    /// Explicit cells; when absent the nine-cell grid over `{0, low, high}` is used.
    #[serde(default)]
    pub gap_grid: Option<Vec<GapConfig>>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub extractor_mode: ExtractorMode,
    #[serde(default)]
    pub latent_mode: LatentMode,
    /// Optional CSV of latent rows replacing Gaussian draws.
    #[serde(default)]
    pub latents_csv: Option<PathBuf>,
    #[serde(default)]
    pub sigma_y: f64,
    #[serde(default)]
    pub sigma_ys: f64,
    #[serde(default)]
    pub propensity_scale: f64,
    /// Fixed extractor weight; when absent network sweeps pick it by the validation test.
    #[serde(default)]
    pub lambda_f: Option<f64>,
    #[serde(default = "default_lambda_tau")]
    pub lambda_tau: f64,
    /// Significance level of the extractor-weight test.
    #[serde(default = "default_alpha")]
    pub lambda_f_alpha: f64,
    #[serde(default)]
    pub gp: GpOutcomeSpec,
    #[serde(default = "default_flow_layers")]
    pub flow_layers: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub altmin: AltMinConfig,
    #[serde(default)]
    pub contrastive: ContrastiveConfig,
    /// Write wall-clock fit times; off keeps result files reproducible.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl SweepConfig {
    /// Minimal configuration with every optional field at its default.
    pub fn new(dgp_kind: DgpKind, seeds: Vec<u64>) -> Self {
        let json = serde_json::json!({ "dgp_kind": dgp_kind, "seeds": seeds });
        serde_json::from_value(json).expect("defaults deserialize")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at `{path}`: {}", e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<Vec<GapConfig>> {
        match &self.gap_grid {
            Some(g) => Ok(g.clone()),
            None => default_gap_grid(self.low, self.high, self.gamma_w),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.estimators.is_empty() {
            return bad("estimators must be nonempty".into());
        }
        if self.n_train < 2 || self.n_sim < 1 || self.n_test < 1 || self.n_z == 0 {
            return bad("n_train >= 2, n_sim >= 1, n_test >= 1 and n_z >= 1 are required".into());
        }
        if self.threads == 0 {
            return bad("threads must be positive".into());
        }
        if self.dgp_kind == DgpKind::Flow && self.flow_layers == 0 {
            return bad("flow_layers must be positive".into());
        }
        if !(self.sigma_y >= 0.0 && self.sigma_ys >= 0.0) {
            return bad("noise levels must be nonnegative".into());
        }
        if matches!(self.lambda_f, Some(v) if !(v >= 0.0)) || !(self.lambda_tau >= 0.0) {
            return bad("loss weights must be nonnegative".into());
        }
        if !(self.lambda_f_alpha > 0.0 && self.lambda_f_alpha < 1.0) {
            return bad("lambda_f_alpha must lie in (0, 1)".into());
        }
        let grid = self.grid().map_err(|e| Error::Config(format!("gap grid: {e}")))?;
        if grid.is_empty() {
            return bad("gap grid must be nonempty".into());
        }
        for (i, g) in grid.iter().enumerate() {
            g.validate().map_err(|e| Error::Config(format!("gap_grid[{i}]: {e}")))?;
        }
        self.gp.validate().map_err(|e| Error::Config(format!("gp: {e}")))?;
        self.train.validate().map_err(|e| Error::Config(format!("train: {e}")))?;
        self.contrastive
            .validate()
            .map_err(|e| Error::Config(format!("contrastive: {e}")))?;
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<SweepConfig> {
    let text = std::fs::read_to_string(path)?;
    SweepConfig::from_json_str(&text)
}
