use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dgp::CouplingFlow;
use crate::error::{invalid, Result};
use crate::linalg::{gaussian_matrix, serde_matrix, serde_vector};

pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Linear,
    Mlp,
    InverseFlow,
}

/// `tanh(x·W1 + b1)·W2 + b2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpMap {
    #[serde(with = "serde_matrix")]
    pub w1: DMatrix<f64>,
    #[serde(with = "serde_vector")]
    pub b1: DVector<f64>,
    #[serde(with = "serde_matrix")]
    pub w2: DMatrix<f64>,
    #[serde(with = "serde_vector")]
    pub b2: DVector<f64>,
}

pub(crate) struct MlpCache {
    pub hidden: DMatrix<f64>,
}

impl MlpMap {
    pub fn random<R: Rng + ?Sized>(n_x: usize, hidden: usize, n_z: usize, rng: &mut R) -> Self {
        Self {
            w1: gaussian_matrix(rng, n_x, hidden) / (n_x as f64).sqrt(),
            b1: DVector::zeros(hidden),
            w2: gaussian_matrix(rng, hidden, n_z) / (hidden as f64).sqrt(),
            b2: DVector::zeros(n_z),
        }
    }

    pub(crate) fn forward_cached(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, MlpCache) {
        let mut h = x * &self.w1;
        for mut row in h.row_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v + self.b1[j]).tanh();
            }
        }
        let mut out = &h * &self.w2;
        for mut row in out.row_iter_mut() {
            row += self.b2.transpose();
        }
        (out, MlpCache { hidden: h })
    }

    /// Parameter gradients given the upstream gradient of the outputs, packed like [`MlpMap::params`].
    pub(crate) fn backward(&self, x: &DMatrix<f64>, cache: &MlpCache, d_out: &DMatrix<f64>) -> Vec<f64> {
        let dw2 = cache.hidden.transpose() * d_out;
        let db2 = d_out.row_sum().transpose();
        let mut dh = d_out * self.w2.transpose();
        dh.zip_apply(&cache.hidden, |g, h| *g *= 1.0 - h * h);
        let dw1 = x.transpose() * &dh;
        let db1 = dh.row_sum().transpose();
        let mut g = Vec::with_capacity(self.n_params());
        for block in [dw1.as_slice(), db1.as_slice(), dw2.as_slice(), db2.as_slice()] {
            g.extend_from_slice(block);
        }
        g
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn params(&self, out: &mut Vec<f64>) {
        for block in [self.w1.as_slice(), self.b1.as_slice(), self.w2.as_slice(), self.b2.as_slice()] {
            out.extend_from_slice(block);
        }
    }

    fn set_params(&mut self, p: &[f64]) -> usize {
        let mut off = 0;
        for block in [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ] {
            let n = block.len();
            block.copy_from_slice(&p[off..off + n]);
            off += n;
        }
        off
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EncoderArm {
    Linear {
        #[serde(with = "serde_matrix")]
        map: DMatrix<f64>,
    },
    Mlp(MlpMap),
    InverseFlow(CouplingFlow),
}

/// Per-treatment representation extractors `f_0`, `f_1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub kind: EncoderKind,
    pub n_x: usize,
    pub n_z: usize,
    pub normalize: bool,
    pub arms: [EncoderArm; 2],
}

pub(crate) fn normalize_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let n = row.norm().max(NORM_EPS);
        row /= n;
    }
}

impl Encoder {
    pub fn linear(maps: [DMatrix<f64>; 2], normalize: bool) -> Result<Self> {
        let (n_x, n_z) = maps[0].shape();
        if maps[1].shape() != (n_x, n_z) {
            return invalid("linear encoder arms must share a shape");
        }
        let [a, b] = maps;
        Ok(Self {
            kind: EncoderKind::Linear,
            n_x,
            n_z,
            normalize,
            arms: [EncoderArm::Linear { map: a }, EncoderArm::Linear { map: b }],
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::linear([DMatrix::identity(n, n), DMatrix::identity(n, n)], false).expect("square identity")
    }

    pub fn random_linear<R: Rng + ?Sized>(n_x: usize, n_z: usize, normalize: bool, rng: &mut R) -> Self {
        let scale = 1.0 / (n_x as f64).sqrt();
        let a = gaussian_matrix(rng, n_x, n_z) * scale;
        let b = gaussian_matrix(rng, n_x, n_z) * scale;
        Self::linear([a, b], normalize).expect("matching shapes")
    }

    pub fn random_mlp<R: Rng + ?Sized>(n_x: usize, hidden: usize, n_z: usize, normalize: bool, rng: &mut R) -> Self {
        let a = MlpMap::random(n_x, hidden, n_z, rng);
        let b = MlpMap::random(n_x, hidden, n_z, rng);
        Self {
            kind: EncoderKind::Mlp,
            n_x,
            n_z,
            normalize,
            arms: [EncoderArm::Mlp(a), EncoderArm::Mlp(b)],
        }
    }

    /// Exact inverses of known covariate flows.
    pub fn inverse_flows(flows: [CouplingFlow; 2]) -> Result<Self> {
        let n = flows[0].n_x;
        if flows[1].n_x != n {
            return invalid("flows must share a dimension");
        }
        let [a, b] = flows;
        Ok(Self {
            kind: EncoderKind::InverseFlow,
            n_x: n,
            n_z: n,
            normalize: false,
            arms: [EncoderArm::InverseFlow(a), EncoderArm::InverseFlow(b)],
        })
    }

    pub fn linear_map(&self, t: u8) -> Option<&DMatrix<f64>> {
        match &self.arms[t as usize] {
            EncoderArm::Linear { map } => Some(map),
            _ => None,
        }
    }

    /// Unnormalised arm output.
    pub(crate) fn raw(&self, t: u8, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.n_x {
            return invalid(format!("encoder expects {} columns, got {}", self.n_x, x.ncols()));
        }
        Ok(match &self.arms[t as usize] {
            EncoderArm::Linear { map } => x * map,
            EncoderArm::Mlp(net) => net.forward_cached(x).0,
            EncoderArm::InverseFlow(flow) => flow.invert(x)?,
        })
    }

    pub fn transform(&self, t: u8, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if t > 1 {
            return invalid(format!("treatment must be 0 or 1, got {t}"));
        }
        let mut z = self.raw(t, x)?;
        if self.normalize {
            normalize_rows(&mut z);
        }
        Ok(z)
    }

    /// Applies the arm selected by each row's treatment.
    pub fn transform_mixed(&self, t: &[u8], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if t.len() != x.nrows() {
            return invalid("treatment vector and covariates differ in length");
        }
        let z = [self.transform(0, x)?, self.transform(1, x)?];
        Ok(DMatrix::from_fn(x.nrows(), self.n_z, |i, j| z[t[i] as usize][(i, j)]))
    }

    pub fn n_params(&self) -> usize {
        self.arms
            .iter()
            .map(|a| match a {
                EncoderArm::Linear { map } => map.len(),
                EncoderArm::Mlp(net) => net.n_params(),
                EncoderArm::InverseFlow(_) => 0,
            })
            .sum()
    }

    /// Trainable parameters of both arms, each block in column-major order.
    pub fn params(&self) -> DVector<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for a in &self.arms {
            match a {
                EncoderArm::Linear { map } => p.extend_from_slice(map.as_slice()),
                EncoderArm::Mlp(net) => net.params(&mut p),
                EncoderArm::InverseFlow(_) => {}
            }
        }
        DVector::from_vec(p)
    }

    pub fn set_params(&mut self, p: &DVector<f64>) -> Result<()> {
        if p.len() != self.n_params() {
            return invalid(format!("expected {} parameters, got {}", self.n_params(), p.len()));
        }
        let mut off = 0;
        for a in &mut self.arms {
            match a {
                EncoderArm::Linear { map } => {
                    let n = map.len();
                    map.as_mut_slice().copy_from_slice(&p.as_slice()[off..off + n]);
                    off += n;
                }
                EncoderArm::Mlp(net) => off += net.set_params(&p.as_slice()[off..]),
                EncoderArm::InverseFlow(_) => {}
            }
        }
        Ok(())
    }

    pub fn with_params(&self, p: &DVector<f64>) -> Result<Self> {
        let mut e = self.clone();
        e.set_params(p)?;
        Ok(e)
    }
}
