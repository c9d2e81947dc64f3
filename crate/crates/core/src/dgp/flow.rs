//! Fixed random affine coupling flows used as nonlinear covariate generators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{serde_matrix, serde_vector};

pub const HIDDEN: usize = 16;
pub const WEIGHT_SD: f64 = 0.1;
pub const LOG_SCALE_CLAMP: f64 = 2.0;

/// `tanh` network with one hidden layer: `tanh(u·W1 + b1)·W2 + b2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TanhNet {
    #[serde(with = "serde_matrix")]
    pub w1: DMatrix<f64>,
    #[serde(with = "serde_vector")]
    pub b1: DVector<f64>,
    #[serde(with = "serde_matrix")]
    pub w2: DMatrix<f64>,
    #[serde(with = "serde_vector")]
    pub b2: DVector<f64>,
}

impl TanhNet {
    fn random<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let n = Normal::new(0.0, WEIGHT_SD).expect("valid normal");
        let mut g = || n.sample(rng);
        Self {
            w1: DMatrix::from_fn(d_in, HIDDEN, |_, _| g()),
            b1: DVector::from_fn(HIDDEN, |_, _| g()),
            w2: DMatrix::from_fn(HIDDEN, d_out, |_, _| g()),
            b2: DVector::from_fn(d_out, |_, _| g()),
        }
    }

    pub fn forward(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = u * &self.w1;
        for mut row in h.row_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v + self.b1[j]).tanh();
            }
        }
        let mut o = h * &self.w2;
        for mut row in o.row_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += self.b2[j];
            }
        }
        o
    }

    fn zero_weights(&mut self) {
        self.w1.fill(0.0);
        self.b1.fill(0.0);
        self.w2.fill(0.0);
        self.b2.fill(0.0);
    }

    fn blend(&self, other: &Self, g: f64) -> Self {
        Self {
            w1: &self.w1 * (1.0 - g) + &other.w1 * g,
            b1: &self.b1 * (1.0 - g) + &other.b1 * g,
            w2: &self.w2 * (1.0 - g) + &other.w2 * g,
            b2: &self.b2 * (1.0 - g) + &other.b2 * g,
        }
    }
}

/// Affine coupling: the `pass` columns condition a scale and shift of the `transform` columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingLayer {
    pub pass: Vec<usize>,
    pub transform: Vec<usize>,
    pub scale: TanhNet,
    pub shift: TanhNet,
}

impl CouplingLayer {
    fn params(&self, cond: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let s = self
            .scale
            .forward(cond)
            .map(|v| v.clamp(-LOG_SCALE_CLAMP, LOG_SCALE_CLAMP));
        (s, self.shift.forward(cond))
    }

    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let cond = x.select_columns(&self.pass);
        let (s, b) = self.params(&cond);
        let mut out = x.clone();
        for (k, &c) in self.transform.iter().enumerate() {
            for i in 0..x.nrows() {
                out[(i, c)] = x[(i, c)] * s[(i, k)].exp() + b[(i, k)];
            }
        }
        out
    }

    fn inverse(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let cond = y.select_columns(&self.pass);
        let (s, b) = self.params(&cond);
        let mut out = y.clone();
        for (k, &c) in self.transform.iter().enumerate() {
            for i in 0..y.nrows() {
                out[(i, c)] = (y[(i, c)] - b[(i, k)]) * (-s[(i, k)]).exp();
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingFlow {
    pub n_x: usize,
    pub layers: Vec<CouplingLayer>,
}

pub fn new_coupling_flow<R: Rng + ?Sized>(n_x: usize, n_layers: usize, rng: &mut R) -> Result<CouplingFlow> {
    if n_x < 2 {
        return invalid(format!("coupling flow needs n_x >= 2, got {n_x}"));
    }
    let half = n_x / 2;
    let a: Vec<usize> = (0..half).collect();
    let b: Vec<usize> = (half..n_x).collect();
    let layers = (0..n_layers)
        .map(|l| {
            let (pass, transform) = if l % 2 == 0 {
                (a.clone(), b.clone())
            } else {
                (b.clone(), a.clone())
            };
            let scale = TanhNet::random(pass.len(), transform.len(), rng);
            let shift = TanhNet::random(pass.len(), transform.len(), rng);
            CouplingLayer {
                pass,
                transform,
                scale,
                shift,
            }
        })
        .collect();
    Ok(CouplingFlow { n_x, layers })
}

impl CouplingFlow {
    fn check(&self, z: &DMatrix<f64>) -> Result<()> {
        if z.ncols() != self.n_x {
            return invalid(format!("flow expects {} columns, got {}", self.n_x, z.ncols()));
        }
        Ok(())
    }

    pub fn apply(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(z)?;
        Ok(self.layers.iter().fold(z.clone(), |acc, l| l.forward(&acc)))
    }

    pub fn invert(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(x)?;
        Ok(self.layers.iter().rev().fold(x.clone(), |acc, l| l.inverse(&acc)))
    }

    pub fn zero_weights(mut self) -> Self {
        for l in &mut self.layers {
            l.scale.zero_weights();
            l.shift.zero_weights();
        }
        self
    }

    /// Parameter-wise convex combination `(1 − g)·self + g·other`; both flows must share a layout.
    pub fn blend(&self, other: &Self, g: f64) -> Result<Self> {
        if self.n_x != other.n_x || self.layers.len() != other.layers.len() {
            return invalid("blended flows must share dimension and depth");
        }
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| CouplingLayer {
                pass: a.pass.clone(),
                transform: a.transform.clone(),
                scale: a.scale.blend(&b.scale, g),
                shift: a.shift.blend(&b.shift, g),
            })
            .collect();
        Ok(Self { n_x: self.n_x, layers })
    }
}

pub fn apply_coupling_flow(flow: &CouplingFlow, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    flow.apply(z)
}
