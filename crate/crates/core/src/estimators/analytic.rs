use nalgebra::DVector;

use super::model::EstimatorKind;
use crate::dgp::LinearDgpPair;
use crate::error::{invalid, Error, Result};

/// Squared CATE error of a closed-form estimator at `x_star` observed under `t`, assuming noiseless data
/// and oracle extractors `f̃_t = S_t^{-1}`.
pub fn analytic_cate_error(spec: &LinearDgpPair, x_star: &DVector<f64>, t: u8, method: EstimatorKind) -> Result<f64> {
    if t > 1 {
        return invalid(format!("treatment must be 0 or 1, got {t}"));
    }
    if x_star.len() != spec.n_z {
        return invalid(format!("x_star has length {}, expected {}", x_star.len(), spec.n_z));
    }
    let (a, b) = (t as usize, 1 - t as usize);
    let r_inv = &spec.r_inv;
    let s_inv = &spec.s_inv;
    let v: DVector<f64> = match method {
        EstimatorKind::SimOnly => &r_inv[a] * spec.w_tau() - &s_inv[a] * spec.w_tau_s(),
        EstimatorKind::RealOnly => (&r_inv[b] - &r_inv[a]) * &spec.w[b],
        EstimatorKind::MuOnly => (&r_inv[a] - &s_inv[a] * spec.s(b as u8) * &r_inv[b]) * &spec.w[b],
        EstimatorKind::SimPONet => {
            return Err(Error::Unsupported(
                "SimPONet has no closed-form CATE error; it is fitted iteratively".into(),
            ))
        }
    };
    Ok(x_star.dot(&v).powi(2))
}
