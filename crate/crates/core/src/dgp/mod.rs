//! Real and simulator data-generating processes.

mod data;
mod flow;
mod gp;
mod linear;

pub use data::{arm_indices, EvalDataset, ObservationalDataset, SimulatorDataset};
pub use flow::{apply_coupling_flow, new_coupling_flow, CouplingFlow, CouplingLayer, TanhNet};
pub use gp::{jittered_cholesky, rbf_kernel, sample_gp_outcome_functions, GpOutcomeSpec, GpOutcomes};
pub use linear::{
    build_linear_pair, generate_eval, generate_observational, generate_simulator_cf, GapConfig, LinearDgpPair,
    MAX_CONDITION,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::gaussian_vector;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    #[default]
    Gaussian,
    Sphere,
}

pub fn sample_latents<R: Rng + ?Sized>(n: usize, n_z: usize, rng: &mut R, mode: LatentMode) -> Result<DMatrix<f64>> {
    if n == 0 || n_z == 0 {
        return invalid(format!("latent sample needs n >= 1 and n_z >= 1, got n={n}, n_z={n_z}"));
    }
    let mut z = DMatrix::from_row_iterator(n, n_z, (0..n * n_z).map(|_| rng.sample::<f64, _>(StandardNormal)));
    if mode == LatentMode::Sphere {
        for mut row in z.row_iter_mut() {
            let norm = row.norm();
            if norm > 0.0 {
                row /= norm;
            } else {
                row[0] = 1.0;
            }
        }
    }
    Ok(z)
}

/// Population standard deviation.
pub(crate) fn population_sd(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = v.mean();
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Simulator effect for semi-synthetic data: `τ^S = τ + sd(τ)·γ_τ·(z·w)` with a fresh `w ~ N(0, I)`.
pub fn synthesize_semisynthetic_sim_outcomes<R: Rng + ?Sized>(
    tau: &DVector<f64>,
    z: &DMatrix<f64>,
    gamma_tau: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if tau.len() != z.nrows() {
        return invalid(format!("tau has {} rows, latents have {}", tau.len(), z.nrows()));
    }
    let w = gaussian_vector(rng, z.ncols());
    Ok(semisynthetic_with_direction(tau, z, gamma_tau, &w))
}

pub(crate) fn semisynthetic_with_direction(
    tau: &DVector<f64>,
    z: &DMatrix<f64>,
    gamma_tau: f64,
    w: &DVector<f64>,
) -> DVector<f64> {
    let scale = population_sd(tau) * gamma_tau;
    tau + (z * w) * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn sphere_rows_are_unit() {
        let z = sample_latents(3, 2, &mut seeded(0), LatentMode::Sphere).unwrap();
        for r in z.row_iter() {
            assert!((r.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_moments() {
        let z = sample_latents(10_000, 1, &mut seeded(1), LatentMode::Gaussian).unwrap();
        let v = z.column(0).into_owned();
        let mean = v.mean();
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!(mean.abs() < 0.05);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn latents_are_deterministic() {
        let a = sample_latents(2, 3, &mut seeded(7), LatentMode::Gaussian).unwrap();
        let b = sample_latents(2, 3, &mut seeded(7), LatentMode::Gaussian).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(sample_latents(0, 3, &mut seeded(7), LatentMode::Gaussian).is_err());
        assert!(sample_latents(3, 0, &mut seeded(7), LatentMode::Sphere).is_err());
    }

    #[test]
    fn semisynthetic_cases() {
        let z = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let tau = DVector::from_vec(vec![0.0, 2.0]);
        let w = DVector::from_vec(vec![1.0]);
        assert_eq!(semisynthetic_with_direction(&tau, &z, 1.0, &w), DVector::from_vec(vec![1.0, 1.0]));
        let flat = DVector::from_element(2, 3.0);
        let out = synthesize_semisynthetic_sim_outcomes(&flat, &z, 0.7, &mut seeded(0)).unwrap();
        assert_eq!(out, flat);
        let out = synthesize_semisynthetic_sim_outcomes(&tau, &z, 0.0, &mut seeded(0)).unwrap();
        assert_eq!(out, tau);
    }
}
