use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, numerical, Result};
use crate::linalg::gaussian_vector;

pub const MAX_JITTER: f64 = 1e-4;

fn default_gamma_base() -> f64 {
    1.0
}
fn default_gamma_tau_fn() -> f64 {
    0.4
}
fn default_jitter() -> f64 {
    1e-8
}

/// Kernel widths for GP-sampled outcome functions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpOutcomeSpec {
    #[serde(default = "default_gamma_base")]
    pub gamma_base: f64,
    #[serde(default = "default_gamma_tau_fn")]
    pub gamma_tau_fn: f64,
    #[serde(default)]
    pub gamma_tau_gap: f64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

impl Default for GpOutcomeSpec {
    fn default() -> Self {
        Self {
            gamma_base: default_gamma_base(),
            gamma_tau_fn: default_gamma_tau_fn(),
            gamma_tau_gap: 0.0,
            jitter: default_jitter(),
        }
    }
}

impl GpOutcomeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_base > 0.0) || !(self.gamma_tau_fn > 0.0) {
            return invalid("gamma_base and gamma_tau_fn must be strictly positive");
        }
        if !(self.gamma_tau_gap >= 0.0) {
            return invalid("gamma_tau_gap must be nonnegative");
        }
        if !(self.jitter > 0.0) {
            return invalid("jitter must be positive");
        }
        Ok(())
    }
}

/// Outcome functions evaluated at every latent row.
#[derive(Clone, Debug, PartialEq)]
pub struct GpOutcomes {
    pub mu0: DVector<f64>,
    pub mu1: DVector<f64>,
    pub tau: DVector<f64>,
    pub y0s: DVector<f64>,
    pub y1s: DVector<f64>,
    pub tau_s: DVector<f64>,
}

/// `k(a, b) = exp(-γ²‖a − b‖² / 2)`.
pub fn rbf_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let g2 = gamma * gamma;
    let na: Vec<f64> = a.row_iter().map(|r| r.norm_squared()).collect();
    let nb: Vec<f64> = b.row_iter().map(|r| r.norm_squared()).collect();
    let cross = a * b.transpose();
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let d2 = (na[i] + nb[j] - 2.0 * cross[(i, j)]).max(0.0);
        (-0.5 * g2 * d2).exp()
    })
}

/// Cholesky factor of `K + jitter·I`, escalating the jitter tenfold until it succeeds or exceeds the cap.
pub fn jittered_cholesky(k: &DMatrix<f64>, jitter: f64) -> Result<Cholesky<f64, Dyn>> {
    let mut j = jitter;
    while j <= MAX_JITTER * (1.0 + 1e-12) {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += j;
        }
        if let Some(ch) = kj.cholesky() {
            return Ok(ch);
        }
        j *= 10.0;
    }
    numerical(format!("kernel Cholesky failed with jitter up to {MAX_JITTER:e}"))
}

fn draw<R: Rng + ?Sized>(l: &Cholesky<f64, Dyn>, rng: &mut R) -> DVector<f64> {
    let e = gaussian_vector(rng, l.l_dirty().nrows());
    l.l() * e
}

pub fn sample_gp_outcome_functions<R: Rng + ?Sized>(
    z_all: &DMatrix<f64>,
    spec: &GpOutcomeSpec,
    rng: &mut R,
) -> Result<GpOutcomes> {
    spec.validate()?;
    if z_all.nrows() == 0 {
        return invalid("no latent rows to evaluate outcome functions on");
    }
    let chol = |g: f64| jittered_cholesky(&rbf_kernel(z_all, z_all, g), spec.jitter);
    let l_tau = chol(spec.gamma_tau_fn)?;
    let l_base = chol(spec.gamma_base)?;
    let tau_draw = draw(&l_tau, rng);
    let mu0 = draw(&l_base, rng);
    let mu1 = &mu0 + &tau_draw;
    // Stored as the difference so that `mu1 - mu0 == tau` holds bit for bit.
    let tau = &mu1 - &mu0;
    let tau_s = if spec.gamma_tau_gap > 0.0 {
        let l_gap = chol(spec.gamma_tau_gap)?;
        &tau + draw(&l_gap, rng)
    } else {
        tau.clone()
    };
    let y0s = draw(&l_base, rng);
    let y1s = &y0s + &tau_s;
    Ok(GpOutcomes {
        mu0,
        mu1,
        tau,
        y0s,
        y1s,
        tau_s,
    })
}
