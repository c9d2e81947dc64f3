use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, numerical, Result};
use crate::linalg::{gaussian_matrix, gaussian_vector, serde_matrix, serde_vector};

pub const DEFAULT_HIDDEN: usize = 50;

/// Scalar regressor `relu(z·W1 + b1)·w2 + b2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    #[serde(with = "serde_matrix")]
    pub w1: DMatrix<f64>,
    #[serde(with = "serde_vector")]
    pub b1: DVector<f64>,
    #[serde(with = "serde_vector")]
    pub w2: DVector<f64>,
    pub b2: f64,
}

/// Gradient blocks with the same shapes as the network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrad {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DVector<f64>,
    pub b2: f64,
}

impl MlpGrad {
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.w1.len() + self.b1.len() + self.w2.len() + 1);
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(self.b1.as_slice());
        v.extend_from_slice(self.w2.as_slice());
        v.push(self.b2);
        v
    }
}

impl Mlp {
    /// Weights `N(0, 1/fan_in)`, biases zero.
    pub fn new<R: Rng + ?Sized>(n_in: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w1: gaussian_matrix(rng, n_in, hidden) / (n_in as f64).sqrt(),
            b1: DVector::zeros(hidden),
            w2: gaussian_vector(rng, hidden) / (hidden as f64).sqrt(),
            b2: 0.0,
        }
    }

    pub fn zeros(n_in: usize, hidden: usize) -> Self {
        Self {
            w1: DMatrix::zeros(n_in, hidden),
            b1: DVector::zeros(hidden),
            w2: DVector::zeros(hidden),
            b2: 0.0,
        }
    }

    pub fn n_in(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    fn check(&self, z: &DMatrix<f64>) -> Result<()> {
        if z.ncols() != self.n_in() {
            return invalid(format!("network expects {} inputs, got {}", self.n_in(), z.ncols()));
        }
        Ok(())
    }

    fn pre_activation(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = z * &self.w1;
        for mut row in a.row_iter_mut() {
            row += self.b1.transpose();
        }
        a
    }

    pub fn forward(&self, z: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check(z)?;
        if !self.is_finite() {
            return numerical("network parameters are not finite");
        }
        let h = self.pre_activation(z).map(|v| v.max(0.0));
        Ok(h * &self.w2 + DVector::from_element(z.nrows(), self.b2))
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(self.b1.iter()).chain(self.w2.iter()).all(|v| v.is_finite()) && self.b2.is_finite()
    }

    /// Gradients of `Σ_i r_i·out_i` with respect to the parameters and to the inputs.
    pub fn backward(&self, z: &DMatrix<f64>, r: &DVector<f64>) -> Result<(MlpGrad, DMatrix<f64>)> {
        self.check(z)?;
        if r.len() != z.nrows() {
            return invalid("residual weights and inputs differ in length");
        }
        let a = self.pre_activation(z);
        let h = a.map(|v| v.max(0.0));
        let w2 = h.transpose() * r;
        let b2 = r.sum();
        let mut dh = r * self.w2.transpose();
        dh.zip_apply(&a, |g, pre| {
            if pre <= 0.0 {
                *g = 0.0
            }
        });
        let w1 = z.transpose() * &dh;
        let b1 = dh.row_sum().transpose();
        let dz = dh * self.w1.transpose();
        Ok((MlpGrad { w1, b1, w2, b2 }, dz))
    }

    pub fn gradients(&self, z: &DMatrix<f64>, r: &DVector<f64>) -> Result<MlpGrad> {
        Ok(self.backward(z, r)?.0)
    }

    pub fn params_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(self.b1.as_slice());
        out.extend_from_slice(self.w2.as_slice());
        out.push(self.b2);
    }

    /// Reads parameters packed like [`Mlp::params_into`]; returns the count consumed.
    pub fn set_params(&mut self, p: &[f64]) -> usize {
        let mut off = 0;
        for block in [self.w1.as_mut_slice(), self.b1.as_mut_slice(), self.w2.as_mut_slice()] {
            let n = block.len();
            block.copy_from_slice(&p[off..off + n]);
            off += n;
        }
        self.b2 = p[off];
        off + 1
    }
}

pub fn mlp_forward(net: &Mlp, z: &DMatrix<f64>) -> Result<DVector<f64>> {
    net.forward(z)
}

pub fn mlp_gradients(net: &Mlp, z: &DMatrix<f64>, residual_weights: &DVector<f64>) -> Result<MlpGrad> {
    net.gradients(z, residual_weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(3, 50);
        let z = gaussian_matrix(&mut seeded(0), 4, 3);
        assert_eq!(net.forward(&z).unwrap(), DVector::zeros(4));
    }

    #[test]
    fn hand_forward() {
        let net = Mlp {
            w1: DMatrix::from_element(1, 1, 1.5),
            b1: DVector::zeros(1),
            w2: DVector::from_element(1, -2.0),
            b2: 0.0,
        };
        let out = net.forward(&DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert_eq!(out[0], -6.0);
        let out = net.forward(&DMatrix::from_element(1, 1, -2.0)).unwrap();
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn batch_equals_rows() {
        let mut rng = seeded(1);
        let net = Mlp::new(3, 7, &mut rng);
        let z = gaussian_matrix(&mut rng, 5, 3);
        let batch = net.forward(&z).unwrap();
        for i in 0..5 {
            let row = net.forward(&z.rows(i, 1).into_owned()).unwrap();
            assert_eq!(row[0], batch[i]);
        }
    }

    #[test]
    fn zero_weights_zero_gradient() {
        let mut rng = seeded(1);
        let net = Mlp::new(3, 7, &mut rng);
        let z = gaussian_matrix(&mut rng, 5, 3);
        let g = net.gradients(&z, &DVector::zeros(5)).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        let mut net = Mlp::zeros(2, 3);
        assert!(net.forward(&DMatrix::zeros(1, 3)).is_err());
        net.b2 = f64::NAN;
        assert!(net.forward(&DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn params_round_trip() {
        let net = Mlp::new(3, 4, &mut seeded(2));
        let mut p = Vec::new();
        net.params_into(&mut p);
        assert_eq!(p.len(), net.n_params());
        let mut other = Mlp::zeros(3, 4);
        assert_eq!(other.set_params(&p), p.len());
        assert_eq!(other, net);
    }
}
