use nalgebra::DMatrix;

use super::model::{CateModel, EstimatorKind, Head};
use crate::contrastive::Encoder;
use crate::dgp::{ObservationalDataset, SimulatorDataset};
use crate::error::{invalid, Result};
use crate::linalg::lstsq_vec;

fn check_arm(x: &DMatrix<f64>, arm: u8) -> Result<()> {
    if x.nrows() < x.ncols() {
        return invalid(format!(
            "arm {arm} has {} rows, needs at least {} for a full-rank fit",
            x.nrows(),
            x.ncols()
        ));
    }
    Ok(())
}

/// Per-arm OLS on raw covariates; the composed map `x·β̂_t` needs no extractor.
pub fn fit_real_only_linear(d_trn: &ObservationalDataset) -> Result<CateModel> {
    d_trn.validate()?;
    let mut heads = Vec::with_capacity(2);
    for arm in 0..2u8 {
        let (x, y) = d_trn.arm(arm);
        check_arm(&x, arm)?;
        heads.push(Head::Linear {
            w: lstsq_vec(&x, &y, &format!("real_only arm {arm}"))?,
        });
    }
    let [h0, h1]: [Head; 2] = heads.try_into().expect("two heads");
    Ok(CateModel::new(EstimatorKind::RealOnly, Encoder::identity(d_trn.n_x()), [h0, h1]))
}

/// Per-arm OLS on the simulator representations `f̃_t(x)`.
pub fn fit_mu_only_linear(d_trn: &ObservationalDataset, f_tilde: &Encoder) -> Result<CateModel> {
    d_trn.validate()?;
    let mut heads = Vec::with_capacity(2);
    for arm in 0..2u8 {
        let (x, y) = d_trn.arm(arm);
        let z = f_tilde.transform(arm, &x)?;
        check_arm(&z, arm)?;
        heads.push(Head::Linear {
            w: lstsq_vec(&z, &y, &format!("mu_only arm {arm}"))?,
        });
    }
    let [h0, h1]: [Head; 2] = heads.try_into().expect("two heads");
    Ok(CateModel::new(EstimatorKind::MuOnly, f_tilde.clone(), [h0, h1]))
}

/// Simulator-only fit: `μ̃_0` regresses `y_0^S` and `μ̃_1 = μ̃_0 + w̃_τ`, with `w̃_τ` regressing `y_1^S − y_0^S`,
/// both on `f̃_0(x_0^S)`.
pub fn fit_sim_only_linear(d_syn: &SimulatorDataset, f_tilde: &Encoder) -> Result<CateModel> {
    d_syn.validate()?;
    let z = f_tilde.transform(0, &d_syn.x0)?;
    if z.nrows() < z.ncols() {
        return invalid(format!("simulator data has {} rows, needs at least {}", z.nrows(), z.ncols()));
    }
    let w0 = lstsq_vec(&z, &d_syn.y0, "sim_only base")?;
    let w_tau = lstsq_vec(&z, &d_syn.tau(), "sim_only effect")?;
    let w1 = &w0 + &w_tau;
    Ok(CateModel::new(
        EstimatorKind::SimOnly,
        f_tilde.clone(),
        [Head::Linear { w: w0 }, Head::Linear { w: w1 }],
    ))
}
