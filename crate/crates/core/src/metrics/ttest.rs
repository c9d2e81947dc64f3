use nalgebra::DVector;
use statrs::function::beta::beta_reg;

use crate::error::{invalid, Result};

/// Student-t CDF via the regularised incomplete beta function.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_nan() || !(df > 0.0) {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let x = df / (df + t * t);
    let tail = 0.5 * beta_reg(df / 2.0, 0.5, x);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// One-sided paired t-test of `H1: mean(b − a) > 0`, i.e. method `a` has lower error.
///
/// All-zero differences give 0.5; zero spread with a nonzero mean gives 0 or 1 by sign.
pub fn paired_t_test_one_sided(a_sq_errors: &DVector<f64>, b_sq_errors: &DVector<f64>) -> Result<f64> {
    if a_sq_errors.len() != b_sq_errors.len() {
        return invalid("paired samples differ in length");
    }
    let n = a_sq_errors.len();
    if n < 3 {
        return invalid(format!("paired t-test needs at least 3 pairs, got {n}"));
    }
    let d = b_sq_errors - a_sq_errors;
    let mean = d.mean();
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(if mean > 0.0 {
            0.0
        } else if mean < 0.0 {
            1.0
        } else {
            0.5
        });
    }
    let t = mean * (n as f64).sqrt() / sd;
    Ok(1.0 - student_t_cdf(t, (n - 1) as f64))
}
