use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::{oracle_linear_map, Encoder};
use crate::dgp::{
    build_linear_pair, generate_observational, generate_simulator_cf, sample_latents, GapConfig, LatentMode,
    LinearDgpPair, ObservationalDataset, SimulatorDataset,
};
use crate::error::Result;
use crate::estimators::{
    analytic_cate_error, fit_mu_only_linear, fit_real_only_linear, fit_sim_only_linear, fit_simponet_linear,
    AltMinConfig, CateModel, EstimatorKind,
};
use crate::linalg::random_orthogonal;
use crate::metrics::{check_decomposition_bound, check_generalization_bound};
use crate::rng::{derive, seeded, SimRng};

pub const ANALYTIC_REL_TOL: f64 = 1e-6;
pub const DECOMPOSITION_ABS_TOL: f64 = 1e-9;
pub const GENERALIZATION_REL_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub seed: u64,
    pub analytic_dims: Vec<usize>,
    pub analytic_specs_per_dim: usize,
    pub decomposition_instances: usize,
    pub generalization_instances: usize,
    pub descent_instances: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            analytic_dims: vec![2, 5, 10],
            analytic_specs_per_dim: 20,
            decomposition_instances: 100,
            generalization_instances: 50,
            descent_instances: 100,
        }
    }
}

/// Result of one property suite. `worst` is the suite's least favourable statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub instances: usize,
    pub failures: usize,
    pub worst: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.instances > 0
    }
}

pub fn random_gaps<R: Rng + ?Sized>(rng: &mut R) -> GapConfig {
    GapConfig::new(
        rng.random_range(0.0..=0.5),
        rng.random_range(0.0..=0.5),
        rng.random_range(0.0..=1.0),
    )
    .expect("ranges are within bounds")
}

/// Random linear instance with data from both processes.
pub struct LinearInstance {
    pub spec: LinearDgpPair,
    pub d_trn: ObservationalDataset,
    pub d_syn: SimulatorDataset,
}

pub fn random_linear_instance(rng: &mut SimRng, n_z: usize, n: usize, noise: (f64, f64)) -> Result<LinearInstance> {
    let spec = build_linear_pair(random_gaps(rng), n_z, noise, rng)?;
    let z = sample_latents(n, n_z, rng, LatentMode::Gaussian)?;
    let d_trn = generate_observational(&spec, &z, rng)?;
    let z_s = sample_latents(n, n_z, rng, LatentMode::Gaussian)?;
    let d_syn = generate_simulator_cf(&spec, &z_s, rng)?;
    Ok(LinearInstance { spec, d_trn, d_syn })
}

/// Squared CATE error of a fitted model at one covariate row, measured by prediction.
fn measured_sq_error(model: &CateModel, spec: &LinearDgpPair, z: &DMatrix<f64>, t: u8) -> Result<(f64, nalgebra::DVector<f64>)> {
    let x = z * spec.r(t);
    let pred = model.predict_cate(&x, &[t])?[0];
    let truth = (z * spec.w_tau())[0];
    Ok(((pred - truth).powi(2), x.row(0).transpose()))
}

pub fn verify_analytic(cfg: &VerifyConfig) -> Result<CheckOutcome> {
    let mut out = CheckOutcome {
        name: "analytic_cate_error".into(),
        instances: 0,
        failures: 0,
        worst: 0.0,
    };
    for &n_z in &cfg.analytic_dims {
        for i in 0..cfg.analytic_specs_per_dim {
            let rng = &mut seeded(derive(cfg.seed, &format!("analytic/{n_z}/{i}")));
            let inst = random_linear_instance(rng, n_z, 10 * n_z + 40, (0.0, 0.0))?;
            let f_tilde = oracle_linear_map(&inst.spec.s_inv)?;
            let models = [
                fit_sim_only_linear(&inst.d_syn, &f_tilde)?,
                fit_real_only_linear(&inst.d_trn)?,
                fit_mu_only_linear(&inst.d_trn, &f_tilde)?,
            ];
            let z = sample_latents(1, n_z, rng, LatentMode::Gaussian)?;
            let t = u8::from(rng.random::<bool>());
            for m in &models {
                let (measured, x_star) = measured_sq_error(m, &inst.spec, &z, t)?;
                let analytic = analytic_cate_error(&inst.spec, &x_star, t, m.kind)?;
                let rel = (measured - analytic).abs() / analytic.abs().max(1e-12);
                out.instances += 1;
                out.worst = out.worst.max(rel);
                if !(rel <= ANALYTIC_REL_TOL) {
                    out.failures += 1;
                }
            }
        }
    }
    Ok(out)
}

fn random_altmin(rng: &mut SimRng) -> AltMinConfig {
    AltMinConfig {
        lambda_f: 10f64.powf(rng.random_range(-3.0..1.0)),
        lambda_tau: rng.random_range(0.0..10.0),
        ..AltMinConfig::default()
    }
}

fn fit_kind(kind: EstimatorKind, inst: &LinearInstance, f_tilde: &Encoder, rng: &mut SimRng) -> Result<CateModel> {
    Ok(match kind {
        EstimatorKind::SimOnly => fit_sim_only_linear(&inst.d_syn, f_tilde)?,
        EstimatorKind::RealOnly => fit_real_only_linear(&inst.d_trn)?,
        EstimatorKind::MuOnly => fit_mu_only_linear(&inst.d_trn, f_tilde)?,
        EstimatorKind::SimPONet => fit_simponet_linear(&inst.d_trn, &inst.d_syn, f_tilde, &random_altmin(rng))?.0,
    })
}

/// CATE error is at most twice the factual plus twice the counterfactual error.
pub fn verify_decomposition(cfg: &VerifyConfig) -> Result<CheckOutcome> {
    let mut out = CheckOutcome {
        name: "decomposition_bound".into(),
        instances: 0,
        failures: 0,
        worst: f64::INFINITY,
    };
    for i in 0..cfg.decomposition_instances {
        let rng = &mut seeded(derive(cfg.seed, &format!("decomposition/{i}")));
        let n_z = rng.random_range(2..=6);
        let noise = (rng.random_range(0.0..0.5), rng.random_range(0.0..0.5));
        let inst = random_linear_instance(rng, n_z, 60, noise)?;
        let f_tilde = Encoder::linear(
            [&inst.spec.s_inv[0] * random_orthogonal(rng, n_z), &inst.spec.s_inv[1] * random_orthogonal(rng, n_z)],
            false,
        )?;
        let model = fit_kind(EstimatorKind::ALL[i % 4], &inst, &f_tilde, rng)?;
        let probe = sample_latents(256, n_z, rng, LatentMode::Gaussian)?;
        let t = u8::from(rng.random::<bool>());
        let rep = check_decomposition_bound(&model, &inst.spec, &probe, t)?;
        out.instances += 1;
        out.worst = out.worst.min(rep.margin);
        if !rep.holds(DECOMPOSITION_ABS_TOL, 0.0) {
            out.failures += 1;
        }
    }
    Ok(out)
}

/// Generalisation bound for SimPONet with simulator extractors known up to a rotation.
pub fn verify_generalization(cfg: &VerifyConfig) -> Result<CheckOutcome> {
    let mut out = CheckOutcome {
        name: "generalization_bound".into(),
        instances: 0,
        failures: 0,
        worst: f64::INFINITY,
    };
    for i in 0..cfg.generalization_instances {
        let rng = &mut seeded(derive(cfg.seed, &format!("generalization/{i}")));
        let n_z = rng.random_range(2..=6);
        let sigma_y = rng.random_range(0.0..0.5);
        let inst = random_linear_instance(rng, n_z, 80, (sigma_y, 0.0))?;
        let q = random_orthogonal(rng, n_z);
        let f_tilde = Encoder::linear([&inst.spec.s_inv[0] * &q, &inst.spec.s_inv[1] * &q], false)?;
        let sim_model = fit_sim_only_linear(&inst.d_syn, &f_tilde)?;
        let (model, _) = fit_simponet_linear(&inst.d_trn, &inst.d_syn, &f_tilde, &random_altmin(rng))?;
        let probe = sample_latents(256, n_z, rng, LatentMode::Gaussian)?;
        let t = u8::from(rng.random::<bool>());
        let rep = check_generalization_bound(&model, &inst.spec, (&f_tilde, &sim_model), &probe, t)?;
        out.instances += 1;
        out.worst = out.worst.min(rep.margin / rep.rhs.max(1.0));
        if !rep.holds(0.0, GENERALIZATION_REL_TOL) {
            out.failures += 1;
        }
    }
    Ok(out)
}

/// Alternating minimisation never increases its objective.
pub fn verify_descent(cfg: &VerifyConfig) -> Result<CheckOutcome> {
    let mut out = CheckOutcome {
        name: "altmin_descent".into(),
        instances: 0,
        failures: 0,
        worst: f64::NEG_INFINITY,
    };
    for i in 0..cfg.descent_instances {
        let rng = &mut seeded(derive(cfg.seed, &format!("descent/{i}")));
        let n_z = rng.random_range(2..=6);
        let noise = (rng.random_range(0.0..0.5), rng.random_range(0.0..0.5));
        let inst = random_linear_instance(rng, n_z, 60, noise)?;
        let f_tilde = Encoder::linear(
            [&inst.spec.s_inv[0] * random_orthogonal(rng, n_z), &inst.spec.s_inv[1] * random_orthogonal(rng, n_z)],
            false,
        )?;
        let (_, rep) = fit_simponet_linear(&inst.d_trn, &inst.d_syn, &f_tilde, &random_altmin(rng))?;
        out.instances += 1;
        out.worst = out.worst.max(rep.max_relative_increase());
        if !rep.is_monotone() {
            out.failures += 1;
        }
    }
    Ok(out)
}

pub fn run_verification(cfg: &VerifyConfig) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        verify_analytic(cfg)?,
        verify_decomposition(cfg)?,
        verify_generalization(cfg)?,
        verify_descent(cfg)?,
    ])
}
