use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::encoder::Encoder;
use crate::dgp::SimulatorDataset;
use crate::error::{invalid, Result};
use crate::linalg::{inverse, lstsq, procrustes, serde_matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Orthogonal,
    Affine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub map_kind: MapKind,
    pub residual: f64,
    pub mean_cosine: f64,
    #[serde(with = "serde_matrix")]
    pub estimated_h: DMatrix<f64>,
}

/// Closed-form cross-map: `f̃_0 = I`, `f̃_1 = A^{-1}` with `A` the least-squares map from `x0` to `x1`.
pub fn pairwise_linear_map(d_syn: &SimulatorDataset) -> Result<Encoder> {
    d_syn.validate()?;
    let n_x = d_syn.x0.ncols();
    if d_syn.len() < n_x {
        return invalid(format!("cross-map needs at least {n_x} pairs, got {}", d_syn.len()));
    }
    let a = lstsq(&d_syn.x0, &d_syn.x1, "simulator x0")?;
    let a_inv = inverse(&a, "cross-map")?;
    Encoder::linear([DMatrix::identity(n_x, n_x), a_inv], false)
}

/// Oracle extractors built from known simulator inverse maps.
pub fn oracle_linear_map(s_inv: &[DMatrix<f64>; 2]) -> Result<Encoder> {
    Encoder::linear(s_inv.clone(), false)
}

/// Aligns stacked encoder outputs to the true latents and reports the relative residual.
pub fn alignment_residual(
    enc: &Encoder,
    probe_x: [&DMatrix<f64>; 2],
    probe_z: [&DMatrix<f64>; 2],
    map_kind: MapKind,
) -> Result<AlignmentReport> {
    let z_hat0 = enc.transform(0, probe_x[0])?;
    let z_hat1 = enc.transform(1, probe_x[1])?;
    let n = z_hat0.nrows() + z_hat1.nrows();
    if probe_z[0].nrows() != z_hat0.nrows() || probe_z[1].nrows() != z_hat1.nrows() {
        return invalid("probe covariates and latents differ in row count");
    }
    let n_z = probe_z[0].ncols();
    if n < n_z {
        return invalid(format!("alignment needs at least {n_z} probe rows, got {n}"));
    }
    let stack = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
        let mut s = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
        s.rows_mut(0, a.nrows()).copy_from(a);
        s.rows_mut(a.nrows(), b.nrows()).copy_from(b);
        s
    };
    let z_hat = stack(&z_hat0, &z_hat1);
    let z = stack(probe_z[0], probe_z[1]);
    if z_hat.ncols() != z.ncols() {
        return invalid("representation width differs from latent width");
    }
    let a = match map_kind {
        MapKind::Orthogonal => procrustes(&z_hat, &z),
        MapKind::Affine => lstsq(&z_hat, &z, "alignment")?,
    };
    let aligned = &z_hat * &a;
    let residual = (&aligned - &z).norm() / z.norm();
    let mean_cosine = aligned
        .row_iter()
        .zip(z.row_iter())
        .map(|(p, q)| p.dot(&q) / (p.norm() * q.norm()).max(1e-300))
        .sum::<f64>()
        / n as f64;
    Ok(AlignmentReport {
        map_kind,
        residual,
        mean_cosine,
        estimated_h: a,
    })
}
