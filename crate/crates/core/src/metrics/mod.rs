//! Error metrics, empirical distances, significance tests and numeric bound checks.

mod bounds;
mod ttest;

pub use bounds::{check_decomposition_bound, check_generalization_bound, BoundReport};
pub use ttest::{paired_t_test_one_sided, student_t_cdf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dgp::ObservationalDataset;
use crate::error::{invalid, Result};
use crate::estimators::CateModel;

/// `(mse, rmse)` of predicted against true effects.
pub fn cate_error(pred: &DVector<f64>, truth: &DVector<f64>) -> Result<(f64, f64)> {
    if pred.len() != truth.len() {
        return invalid(format!("prediction length {} differs from truth length {}", pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return invalid("cate_error needs at least one element");
    }
    let mse = (pred - truth).norm_squared() / pred.len() as f64;
    Ok((mse, mse.sqrt()))
}

/// Overall factual MSE and per-row squared errors of `μ̂_{t_i}(f̂_{t_i}(x_i))` against `y_i`.
pub fn factual_error(model: &CateModel, data: &ObservationalDataset) -> Result<(f64, DVector<f64>)> {
    let pred = model.predict_outcome(&data.x, &data.t)?;
    if pred.len() != data.y.len() {
        return invalid("prediction and outcome lengths differ");
    }
    let sq = (pred - &data.y).map(|v| v * v);
    let mse = if sq.is_empty() { 0.0 } else { sq.mean() };
    Ok((mse, sq))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    /// Extractors compared on covariates of one arm.
    XGivenT,
    /// Effect functions compared on latents.
    ZSpace,
    /// Effect functions compared on transformed latent points.
    TauOnPoints,
}

/// Mean squared output distance of two functions over the probe rows.
pub fn empirical_distance<A, B>(_kind: DistanceKind, a: A, b: B, probe: &DMatrix<f64>) -> Result<f64>
where
    A: Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>,
    B: Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    if probe.nrows() == 0 {
        return invalid("distance probe is empty");
    }
    let fa = a(probe)?;
    let fb = b(probe)?;
    if fa.shape() != fb.shape() {
        return invalid(format!("function outputs differ in shape: {:?} vs {:?}", fa.shape(), fb.shape()));
    }
    Ok((fa - fb).norm_squared() / probe.nrows() as f64)
}

/// Column view of a vector-valued result, for use with [`empirical_distance`].
pub fn as_column(v: DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    DMatrix::from_vec(n, 1, v.data.into())
}
