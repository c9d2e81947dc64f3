//! Dense linear-algebra helpers shared by every module.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{numerical, Result};

/// Relative singular-value cutoff below which a matrix is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-12;

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    // Column-major fill order is part of the determinism contract.
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().svd(false, false).singular_values
}

/// Ratio of largest to smallest singular value; infinite for singular input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = singular_values(m);
    let max = s.max();
    let min = s.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Least-squares solution of `a · x = b` through the SVD. Errors when `a` lacks full column rank.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return numerical(format!(
            "{what}: row mismatch {} vs {}",
            a.nrows(),
            b.nrows()
        ));
    }
    if a.nrows() < a.ncols() {
        return numerical(format!(
            "{what}: {} rows cannot determine {} columns",
            a.nrows(),
            a.ncols()
        ));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= RANK_TOL * smax {
        return numerical(format!("{what}: rank deficient design (sigma_min/sigma_max = {:e})", smin / smax));
    }
    svd.solve(b, 0.0)
        .map_err(|e| crate::error::Error::Numerical(format!("{what}: {e}")))
}

pub fn lstsq_vec(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let bm = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = lstsq(a, &bm, what)?;
    Ok(x.column(0).into_owned())
}

pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return numerical(format!("{what}: matrix is not square"));
    }
    let cond = condition_number(m);
    if !cond.is_finite() || cond > 1.0 / RANK_TOL {
        return numerical(format!("{what}: singular matrix (condition {cond:e})"));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| crate::error::Error::Numerical(format!("{what}: inversion failed")))
}

/// Solves the symmetric positive definite system `a · x = b`, falling back to LU.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    a.clone()
        .lu()
        .solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| crate::error::Error::Numerical(format!("{what}: singular system")))
}

/// Orthogonal `A` minimising `‖from · A − to‖_F`.
pub fn procrustes(from: &DMatrix<f64>, to: &DMatrix<f64>) -> DMatrix<f64> {
    let m = from.transpose() * to;
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    u * vt
}

/// Haar-distributed orthogonal matrix from the QR factorisation of a Gaussian draw.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, n, n);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Mean over rows of the squared row norm.
pub fn mean_sq_row_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.norm_squared() / m.nrows() as f64
}

pub fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    m.select_rows(idx)
}

pub fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Row-major nested-array (de)serialisation for matrices.
pub mod serde_matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>], ncols_hint: usize) -> Result<DMatrix<f64>, String> {
        let ncols = rows.first().map_or(ncols_hint, |r| r.len());
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
            return Err(format!("row {i} has {} entries, expected {ncols}", r.len()));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows, 0).map_err(serde::de::Error::custom)
    }
}

pub mod serde_vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn lstsq_recovers_exact_solution() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = gaussian_matrix(&mut rng, 20, 4);
        let x = gaussian_vector(&mut rng, 4);
        let b = &a * &x;
        let xh = lstsq_vec(&a, &b, "test").unwrap();
        assert!((xh - x).amax() < 1e-12);
    }

    #[test]
    fn lstsq_rejects_rank_deficiency() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(lstsq_vec(&a, &b, "arm 0").unwrap_err().to_string().contains("arm 0"));
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let q = random_orthogonal(&mut rng, 6);
        let err = (q.transpose() * &q - DMatrix::identity(6, 6)).amax();
        assert!(err < 1e-12);
    }

    #[test]
    fn procrustes_undoes_rotation() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let z = gaussian_matrix(&mut rng, 50, 3);
        let q = random_orthogonal(&mut rng, 3);
        let a = procrustes(&(&z * &q), &z);
        assert!((a - q.transpose()).amax() < 1e-10);
    }

    #[test]
    fn row_major_serialisation() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let rows = serde_matrix::to_rows(&m);
        assert_eq!(rows, vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(serde_matrix::from_rows(&rows, 0).unwrap(), m);
    }
}
