use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::empirical_distance;
use super::{as_column, DistanceKind};
use crate::contrastive::Encoder;
use crate::dgp::LinearDgpPair;
use crate::error::{invalid, Error, Result};
use crate::estimators::CateModel;

/// Both sides of a checked inequality `lhs ≤ rhs` and the named right-hand terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub components: BTreeMap<String, f64>,
    pub k_tau: f64,
}

impl BoundReport {
    fn new(lhs: f64, rhs: f64, components: BTreeMap<String, f64>, k_tau: f64) -> Self {
        Self {
            lhs,
            rhs,
            margin: rhs - lhs,
            components,
            k_tau,
        }
    }

    /// `margin ≥ −abs_tol − rel_tol·max(1, rhs)`.
    pub fn holds(&self, abs_tol: f64, rel_tol: f64) -> bool {
        self.margin >= -abs_tol - rel_tol * self.rhs.max(1.0)
    }
}

fn mean_sq(v: &nalgebra::DVector<f64>) -> f64 {
    v.norm_squared() / v.len() as f64
}

fn check_probe(spec: &LinearDgpPair, probe_z: &DMatrix<f64>, t: u8) -> Result<()> {
    if t > 1 {
        return invalid(format!("treatment must be 0 or 1, got {t}"));
    }
    if probe_z.nrows() == 0 || probe_z.ncols() != spec.n_z {
        return invalid(format!("probe must be a nonempty matrix with {} columns", spec.n_z));
    }
    Ok(())
}

/// CATE error on arm `t` against twice the factual plus twice the counterfactual error.
pub fn check_decomposition_bound(model: &CateModel, spec: &LinearDgpPair, probe_z: &DMatrix<f64>, t: u8) -> Result<BoundReport> {
    check_probe(spec, probe_z, t)?;
    let x = probe_z * spec.r(t);
    let tau = probe_z * spec.w_tau();
    let tau_hat = model.predict_cate(&x, &vec![t; x.nrows()])?;
    let lhs = mean_sq(&(tau_hat - tau));
    let f = model.predict_potential(&x, t, t)? - probe_z * &spec.w[t as usize];
    let cf = model.predict_potential(&x, t, 1 - t)? - probe_z * &spec.w[1 - t as usize];
    let eps_f = mean_sq(&f);
    let eps_cf = mean_sq(&cf);
    let components = BTreeMap::from([("eps_f".to_string(), eps_f), ("eps_cf".to_string(), eps_cf)]);
    Ok(BoundReport::new(lhs, 2.0 * eps_f + 2.0 * eps_cf, components, 0.0))
}

/// Generalisation bound for linear models fitted with simulator estimates `(f̃, τ̃^S)`.
///
/// Real covariates are `x = z·R_t`, simulator covariates `x^S = z·S_t`; `d_h` is evaluated at `f̃_t(x^S)`.
pub fn check_generalization_bound(
    model: &CateModel,
    spec: &LinearDgpPair,
    sim_fit: (&Encoder, &CateModel),
    probe_z: &DMatrix<f64>,
    t: u8,
) -> Result<BoundReport> {
    check_probe(spec, probe_z, t)?;
    let (f_tilde, sim_model) = sim_fit;
    let u = model
        .linear_effect()
        .ok_or_else(|| Error::Unsupported("generalisation bound needs linear outcome heads".into()))?;
    if model.f_hat.linear_map(t).is_none() {
        return Err(Error::Unsupported("generalisation bound needs a linear extractor".into()));
    }
    let w_tau = spec.w_tau();
    let k_tau = w_tau.norm().max(u.norm());
    let ti = t as usize;
    let x = probe_z * spec.r(t);
    let x_s = probe_z * spec.s(t);

    let tau = probe_z * &w_tau;
    let tau_hat = model.predict_cate(&x, &vec![t; x.nrows()])?;
    let lhs = mean_sq(&(tau_hat - &tau));
    let eps_f = mean_sq(&(model.predict_potential(&x, t, t)? - probe_z * &spec.w[ti]));

    let points = f_tilde.transform(t, &x_s)?;
    let d_h = empirical_distance(
        DistanceKind::TauOnPoints,
        |p| Ok(as_column(model.effect_on_latents(p)?)),
        |p| Ok(as_column(sim_model.effect_on_latents(p)?)),
        &points,
    )?;
    let d_x_hat = empirical_distance(
        DistanceKind::XGivenT,
        |v| model.f_hat.transform(t, v),
        |v| f_tilde.transform(t, v),
        &x,
    )?;
    let d_z = empirical_distance(
        DistanceKind::ZSpace,
        |z| Ok(as_column(z * &w_tau)),
        |z| Ok(as_column(z * spec.w_tau_s())),
        probe_z,
    )?;
    let d_x_true = empirical_distance(
        DistanceKind::XGivenT,
        |v| Ok(v * &spec.r_inv[ti]),
        |v| Ok(v * &spec.s_inv[ti]),
        &x,
    )?;
    let k2 = k_tau * k_tau;
    let rhs = 8.0 * eps_f + 12.0 * d_h + 12.0 * k2 * d_x_hat + 12.0 * d_z + 12.0 * k2 * d_x_true;
    let components = BTreeMap::from([
        ("eps_f".to_string(), eps_f),
        ("d_h".to_string(), d_h),
        ("d_x_fhat_ftilde".to_string(), d_x_hat),
        ("d_z_tau_tau_s".to_string(), d_z),
        ("d_x_f_fs".to_string(), d_x_true),
    ]);
    Ok(BoundReport::new(lhs, rhs, components, k_tau))
}
