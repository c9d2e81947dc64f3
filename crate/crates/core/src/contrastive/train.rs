use rand::seq::index::sample;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{Encoder, EncoderKind};
use super::infonce::infonce_loss;
use crate::dgp::SimulatorDataset;
use crate::error::{invalid, Error, Result};

const MIN_STEP: f64 = 1e-12;
/// Step growth after an accepted full-batch step.
const STEP_GROWTH: f64 = 1.5;
/// Full-batch training stops once the loss falls by less than `PLATEAU_TOL` (relative) over this many steps.
const PLATEAU_WINDOW: usize = 20;
const PLATEAU_TOL: f64 = 1e-9;

fn default_temperature() -> f64 {
    0.1
}
fn default_steps() -> usize {
    2000
}
fn default_step_size() -> f64 {
    1e-2
}
fn default_hidden() -> usize {
    32
}
fn default_true() -> bool {
    true
}
fn default_kind() -> EncoderKind {
    EncoderKind::Linear
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveConfig {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    /// Rows per step; `None` trains full-batch.
    #[serde(default)]
    pub batch: Option<usize>,
    #[serde(default = "default_kind")]
    pub encoder: EncoderKind,
    /// Representation width; defaults to the covariate width.
    #[serde(default)]
    pub n_z: Option<usize>,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Train linear encoders on per-arm whitened covariates and fold the whitening back into the maps.
    #[serde(default = "default_true")]
    pub whiten: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: default_temperature(),
            steps: default_steps(),
            step_size: default_step_size(),
            batch: None,
            encoder: default_kind(),
            n_z: None,
            hidden: default_hidden(),
            normalize: true,
            whiten: true,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !(self.step_size > 0.0) || self.steps == 0 || self.hidden == 0 {
            return invalid("contrastive temperature, step size, steps and hidden width must be positive");
        }
        if matches!(self.batch, Some(b) if b < 2) {
            return invalid("contrastive batch must hold at least two rows");
        }
        if self.n_z == Some(0) {
            return invalid("contrastive n_z must be positive");
        }
        if self.encoder == EncoderKind::InverseFlow {
            return invalid("inverse-flow encoders are not trainable");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveFit {
    pub encoder: Encoder,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub converged: bool,
    pub loss_trace: Vec<f64>,
}

/// Symmetric `(XᵀX/m)^{-1/2}`, or `None` when the covariance is numerically singular.
fn inverse_sqrt_covariance(x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let cov = x.tr_mul(x) / x.nrows() as f64;
    let eig = SymmetricEigen::new(cov);
    let top = eig.eigenvalues.amax();
    if !(top > 0.0) || eig.eigenvalues.iter().any(|&l| !(l > 1e-10 * top)) {
        return None;
    }
    let q = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Some(q * d * q.transpose())
}

pub fn train_contrastive<R: Rng + ?Sized>(
    d_syn: &SimulatorDataset,
    cfg: &ContrastiveConfig,
    rng: &mut R,
) -> Result<ContrastiveFit> {
    cfg.validate()?;
    d_syn.validate()?;
    let m = d_syn.len();
    if m < 8 {
        return invalid(format!("contrastive training needs at least 8 pairs, got {m}"));
    }
    let n_x = d_syn.x0.ncols();
    let n_z = cfg.n_z.unwrap_or(n_x);
    let mut enc = match cfg.encoder {
        EncoderKind::Mlp => Encoder::random_mlp(n_x, cfg.hidden, n_z, cfg.normalize, rng),
        _ => Encoder::random_linear(n_x, n_z, cfg.normalize, rng),
    };
    let whitening = match (cfg.encoder, cfg.whiten) {
        (EncoderKind::Linear, true) => inverse_sqrt_covariance(&d_syn.x0).zip(inverse_sqrt_covariance(&d_syn.x1)),
        _ => None,
    };
    let whitened;
    let d_syn = match &whitening {
        Some((p0, p1)) => {
            whitened = SimulatorDataset::new(&d_syn.x0 * p0, &d_syn.x1 * p1, d_syn.y0.clone(), d_syn.y1.clone())?;
            &whitened
        }
        None => d_syn,
    };
    let t = cfg.temperature;
    let mut current = infonce_loss(&enc, d_syn, t)?;
    let initial_loss = current.0;
    let mut step = cfg.step_size;
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    trace.push(initial_loss);
    let full = cfg.batch.is_none_or(|b| b >= m);
    let mut params = enc.params();
    for k in 0..cfg.steps {
        let sub;
        let batch = if full {
            d_syn
        } else {
            let idx = sample(rng, m, cfg.batch.expect("batched")).into_vec();
            sub = d_syn.subset(&idx);
            current = infonce_loss(&enc, &sub, t)?;
            &sub
        };
        let (loss, grad) = (current.0, current.1.clone());
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training {
                step: k,
                msg: "contrastive loss or gradient is not finite".into(),
            });
        }
        loop {
            let cand = &params - &grad * step;
            let trial = enc.with_params(&cand)?;
            let eval = if full {
                infonce_loss(&trial, batch, t).ok()
            } else {
                infonce_loss(&trial, batch, t).ok().map(|r| (r.0, DVector::zeros(0)))
            };
            if let Some(next) = eval.filter(|r| r.0 <= loss) {
                params = cand;
                enc = trial;
                if full {
                    trace.push(next.0);
                    current = next;
                    step *= STEP_GROWTH;
                }
                break;
            }
            step *= 0.5;
            if step < MIN_STEP {
                break;
            }
        }
        if step < MIN_STEP {
            break;
        }
        if full && trace.len() > PLATEAU_WINDOW {
            let (then, now) = (trace[trace.len() - 1 - PLATEAU_WINDOW], trace[trace.len() - 1]);
            if then - now <= PLATEAU_TOL * now.abs() {
                break;
            }
        }
    }
    let final_loss = if full {
        *trace.last().expect("nonempty trace")
    } else {
        infonce_loss(&enc, d_syn, t)?.0
    };
    if !final_loss.is_finite() {
        return Err(Error::Training {
            step: cfg.steps,
            msg: "final contrastive loss is not finite".into(),
        });
    }
    if let Some((p0, p1)) = &whitening {
        let maps = [
            p0 * enc.linear_map(0).expect("linear arm"),
            p1 * enc.linear_map(1).expect("linear arm"),
        ];
        enc = Encoder::linear(maps, cfg.normalize)?;
    }
    Ok(ContrastiveFit {
        encoder: enc,
        initial_loss,
        final_loss,
        converged: final_loss < initial_loss,
        loss_trace: trace,
    })
}
