use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::contrastive::Encoder;
use crate::error::{invalid, Error, Result};
use crate::linalg::serde_vector;
use crate::nn::Mlp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    SimOnly,
    RealOnly,
    MuOnly,
    #[serde(rename = "simponet")]
    SimPONet,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [Self::SimOnly, Self::RealOnly, Self::MuOnly, Self::SimPONet];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::SimOnly => "sim_only",
            Self::RealOnly => "real_only",
            Self::MuOnly => "mu_only",
            Self::SimPONet => "simponet",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Head {
    Linear {
        #[serde(with = "serde_vector")]
        w: DVector<f64>,
    },
    Mlp(Mlp),
}

impl Head {
    pub fn eval(&self, z: &DMatrix<f64>) -> Result<DVector<f64>> {
        match self {
            Head::Linear { w } => {
                if z.ncols() != w.len() {
                    return invalid(format!("head expects {} inputs, got {}", w.len(), z.ncols()));
                }
                Ok(z * w)
            }
            Head::Mlp(net) => net.forward(z),
        }
    }

    pub fn linear_weights(&self) -> Option<&DVector<f64>> {
        match self {
            Head::Linear { w } => Some(w),
            Head::Mlp(_) => None,
        }
    }
}

/// A fitted estimator: extractors `f̂_t` and outcome heads `μ̂_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CateModel {
    pub kind: EstimatorKind,
    pub f_hat: Encoder,
    pub mu_hat: [Head; 2],
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl CateModel {
    pub fn new(kind: EstimatorKind, f_hat: Encoder, mu_hat: [Head; 2]) -> Self {
        Self {
            kind,
            f_hat,
            mu_hat,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    /// Linear effect head `ŵ_1 − ŵ_0` when both heads are linear.
    pub fn linear_effect(&self) -> Option<DVector<f64>> {
        Some(self.mu_hat[1].linear_weights()? - self.mu_hat[0].linear_weights()?)
    }

    /// `μ̂_1(z) − μ̂_0(z)` on representations.
    pub fn effect_on_latents(&self, z: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.mu_hat[1].eval(z)? - self.mu_hat[0].eval(z)?)
    }

    pub fn predict_cate(&self, x: &DMatrix<f64>, t: &[u8]) -> Result<DVector<f64>> {
        let z = self.f_hat.transform_mixed(t, x)?;
        self.effect_on_latents(&z)
    }

    /// Factual prediction `μ̂_t(f̂_t(x))` per row.
    pub fn predict_outcome(&self, x: &DMatrix<f64>, t: &[u8]) -> Result<DVector<f64>> {
        let z = self.f_hat.transform_mixed(t, x)?;
        let out = [self.mu_hat[0].eval(&z)?, self.mu_hat[1].eval(&z)?];
        Ok(DVector::from_fn(x.nrows(), |i, _| out[t[i] as usize][i]))
    }

    /// Potential outcome under arm `arm` for covariates rendered under `t`.
    pub fn predict_potential(&self, x: &DMatrix<f64>, t: u8, arm: u8) -> Result<DVector<f64>> {
        let z = self.f_hat.transform(t, x)?;
        self.mu_hat[arm as usize].eval(&z)
    }
}

pub fn predict_cate(model: &CateModel, x: &DMatrix<f64>, t: &[u8]) -> Result<DVector<f64>> {
    model.predict_cate(x, t)
}
