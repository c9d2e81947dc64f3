//! Alternating minimisation for the linear SimPONet objective
//!
//! `Σ_t ‖X_t R̂_t ŵ_t − y_t‖² + λ_f Σ_t ‖X_t (R̂_t − F̃_t)‖²_F + λ_τ ‖Z_s (ŵ_1 − ŵ_0) − Δ^S‖² (+ ε Σ_t ‖ŵ_t‖²)`
//!
//! where `Z_s = f̃_0(x_0^S)` and `Δ^S = y_1^S − y_0^S`. Every block update is an exact minimiser,
//! so the objective never increases.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::closed_form::fit_mu_only_linear;
use super::model::{CateModel, EstimatorKind, Head};
use crate::contrastive::Encoder;
use crate::dgp::{ObservationalDataset, SimulatorDataset};
use crate::error::{invalid, Error, Result};
use crate::linalg::{lstsq_vec, solve_spd};

pub const MIN_LAMBDA_F: f64 = 1e-8;
/// Relative slack allowed on the monotone-descent check.
pub const DESCENT_SLACK: f64 = 1e-9;

fn default_lambda() -> f64 {
    1.0
}
fn default_sweeps() -> usize {
    500
}
fn default_rel_tol() -> f64 {
    1e-10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AltMinConfig {
    #[serde(default = "default_lambda")]
    pub lambda_f: f64,
    #[serde(default = "default_lambda")]
    pub lambda_tau: f64,
    #[serde(default = "default_sweeps")]
    pub max_sweeps: usize,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    /// Optional ridge weight on the heads.
    #[serde(default)]
    pub ridge: f64,
}

impl Default for AltMinConfig {
    fn default() -> Self {
        Self {
            lambda_f: default_lambda(),
            lambda_tau: default_lambda(),
            max_sweeps: default_sweeps(),
            rel_tol: default_rel_tol(),
            ridge: 0.0,
        }
    }
}

impl AltMinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_f >= MIN_LAMBDA_F) {
            return invalid(format!("lambda_f must be at least {MIN_LAMBDA_F:e}"));
        }
        if !(self.lambda_tau >= 0.0) || !(self.ridge >= 0.0) {
            return invalid("lambda_tau and ridge must be nonnegative");
        }
        if self.max_sweeps == 0 || !(self.rel_tol >= 0.0) {
            return invalid("max_sweeps must be positive and rel_tol nonnegative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

impl FitReport {
    /// Largest increase between consecutive trace entries, relative to `max(1, previous)`.
    pub fn max_relative_increase(&self) -> f64 {
        self.objective_trace
            .windows(2)
            .map(|w| (w[1] - w[0]) / w[0].abs().max(1.0))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_monotone(&self) -> bool {
        self.objective_trace.len() < 2 || self.max_relative_increase() <= DESCENT_SLACK
    }
}

struct Problem {
    x: [DMatrix<f64>; 2],
    y: [DVector<f64>; 2],
    x_pinv_y: [DVector<f64>; 2],
    f: [DMatrix<f64>; 2],
    zs: DMatrix<f64>,
    zs_gram: DMatrix<f64>,
    delta: DVector<f64>,
    cfg: AltMinConfig,
}

impl Problem {
    fn objective(&self, r: &[DMatrix<f64>; 2], w: &[DVector<f64>; 2]) -> f64 {
        let mut obj = 0.0;
        for t in 0..2 {
            obj += (&self.x[t] * (&r[t] * &w[t]) - &self.y[t]).norm_squared();
            obj += self.cfg.lambda_f * (&self.x[t] * (&r[t] - &self.f[t])).norm_squared();
            obj += self.cfg.ridge * w[t].norm_squared();
        }
        obj + self.cfg.lambda_tau * (&self.zs * (&w[1] - &w[0]) - &self.delta).norm_squared()
    }

    /// Closed form `R = F + (X⁺y − F·w)·wᵀ / (λ_f + ‖w‖²)`, the rank-one expansion of `(X⁺y·wᵀ + λ_f·F)(w·wᵀ + λ_f·I)⁻¹`.
    fn update_r(&self, t: usize, w: &DVector<f64>) -> DMatrix<f64> {
        let f = &self.f[t];
        let resid = &self.x_pinv_y[t] - f * w;
        f + resid * w.transpose() / (self.cfg.lambda_f + w.norm_squared())
    }

    fn update_w(&self, t: usize, r: &DMatrix<f64>, w_other: &DVector<f64>) -> Result<DVector<f64>> {
        let z_hat = &self.x[t] * r;
        let lt = self.cfg.lambda_tau;
        let sign = if t == 1 { 1.0 } else { -1.0 };
        let mut a = z_hat.transpose() * &z_hat + &self.zs_gram * lt;
        for i in 0..a.nrows() {
            a[(i, i)] += self.cfg.ridge;
        }
        let target = &self.zs * w_other + &self.delta * sign;
        let b = z_hat.transpose() * &self.y[t] + self.zs.transpose() * target * lt;
        solve_spd(&a, &b, &format!("head update for arm {t}"))
    }
}

pub fn fit_simponet_linear(
    d_trn: &ObservationalDataset,
    d_syn: &SimulatorDataset,
    f_tilde: &Encoder,
    cfg: &AltMinConfig,
) -> Result<(CateModel, FitReport)> {
    cfg.validate()?;
    d_trn.validate()?;
    d_syn.validate()?;
    if d_syn.is_empty() {
        return invalid("simulator dataset is empty");
    }
    let f = match (f_tilde.linear_map(0), f_tilde.linear_map(1)) {
        (Some(a), Some(b)) if !f_tilde.normalize => [a.clone(), b.clone()],
        _ => {
            return Err(Error::Unsupported(
                "closed-form SimPONet needs unnormalised linear extractors".into(),
            ))
        }
    };
    let arms = [d_trn.arm(0), d_trn.arm(1)];
    let mut x_pinv_y = Vec::with_capacity(2);
    for (t, (x, y)) in arms.iter().enumerate() {
        if x.nrows() < x.ncols() {
            return invalid(format!("arm {t} has fewer rows than covariates"));
        }
        x_pinv_y.push(lstsq_vec(x, y, &format!("simponet arm {t}"))?);
    }
    let [(x0, y0), (x1, y1)] = arms;
    let zs = f_tilde.transform(0, &d_syn.x0)?;
    let problem = Problem {
        x_pinv_y: [x_pinv_y[0].clone(), x_pinv_y[1].clone()],
        x: [x0, x1],
        y: [y0, y1],
        f: f.clone(),
        zs_gram: zs.transpose() * &zs,
        zs,
        delta: d_syn.tau(),
        cfg: cfg.clone(),
    };

    let init = fit_mu_only_linear(d_trn, f_tilde)?;
    let mut r = f;
    let mut w = [
        init.mu_hat[0].linear_weights().expect("linear").clone(),
        init.mu_hat[1].linear_weights().expect("linear").clone(),
    ];
    let mut trace = vec![problem.objective(&r, &w)];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        for t in 0..2 {
            r[t] = problem.update_r(t, &w[t]);
        }
        w[1] = problem.update_w(1, &r[1], &w[0])?;
        w[0] = problem.update_w(0, &r[0], &w[1])?;
        let obj = problem.objective(&r, &w);
        if !obj.is_finite() {
            return Err(Error::Numerical(format!("objective became non-finite at sweep {sweeps}")));
        }
        let prev = *trace.last().expect("nonempty");
        trace.push(obj);
        if obj == 0.0 || (prev - obj).abs() <= cfg.rel_tol * prev.abs() {
            converged = true;
            break;
        }
    }
    let [r0, r1] = r;
    let [w0, w1] = w;
    let model = CateModel::new(
        EstimatorKind::SimPONet,
        Encoder::linear([r0, r1], false)?,
        [Head::Linear { w: w0 }, Head::Linear { w: w1 }],
    )
    .with_meta("lambda_f", cfg.lambda_f)
    .with_meta("lambda_tau", cfg.lambda_tau)
    .with_meta("ridge", cfg.ridge)
    .with_meta("sweeps", sweeps);
    Ok((
        model,
        FitReport {
            objective_trace: trace,
            sweeps,
            converged,
        },
    ))
}
