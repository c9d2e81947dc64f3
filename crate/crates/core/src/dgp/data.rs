use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{select_rows, select_vec, serde_matrix, serde_vector};

/// Factual training triples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationalDataset {
    #[serde(with = "serde_matrix")]
    pub x: DMatrix<f64>,
    pub t: Vec<u8>,
    #[serde(with = "serde_vector")]
    pub y: DVector<f64>,
}

/// Paired counterfactual covariates and outcomes sharing one latent per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatorDataset {
    #[serde(with = "serde_matrix")]
    pub x0: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub x1: DMatrix<f64>,
    #[serde(with = "serde_vector")]
    pub y0: DVector<f64>,
    #[serde(with = "serde_vector")]
    pub y1: DVector<f64>,
}

/// Test data with both potential outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalDataset {
    #[serde(with = "serde_matrix")]
    pub x: DMatrix<f64>,
    pub t: Vec<u8>,
    #[serde(with = "serde_vector")]
    pub y0: DVector<f64>,
    #[serde(with = "serde_vector")]
    pub y1: DVector<f64>,
    #[serde(with = "serde_vector")]
    pub tau: DVector<f64>,
    #[serde(with = "serde_matrix")]
    pub z: DMatrix<f64>,
}

pub fn arm_indices(t: &[u8], arm: u8) -> Vec<usize> {
    t.iter()
        .enumerate()
        .filter_map(|(i, &ti)| (ti == arm).then_some(i))
        .collect()
}

fn check_treatments(t: &[u8]) -> Result<()> {
    if let Some(i) = t.iter().position(|&v| v > 1) {
        return invalid(format!("treatment at row {i} is {}, expected 0 or 1", t[i]));
    }
    Ok(())
}

impl ObservationalDataset {
    pub fn new(x: DMatrix<f64>, t: Vec<u8>, y: DVector<f64>) -> Result<Self> {
        let d = Self { x, t, y };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.nrows() != self.t.len() || self.x.nrows() != self.y.len() {
            return invalid(format!(
                "row counts differ: x {}, t {}, y {}",
                self.x.nrows(),
                self.t.len(),
                self.y.len()
            ));
        }
        check_treatments(&self.t)?;
        for arm in 0..2u8 {
            if !self.t.contains(&arm) {
                return invalid(format!("treatment arm {arm} is empty"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn n_x(&self) -> usize {
        self.x.ncols()
    }

    /// Covariates and outcomes of one treatment arm.
    pub fn arm(&self, arm: u8) -> (DMatrix<f64>, DVector<f64>) {
        let idx = arm_indices(&self.t, arm);
        (select_rows(&self.x, &idx), select_vec(&self.y, &idx))
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: select_rows(&self.x, idx),
            t: idx.iter().map(|&i| self.t[i]).collect(),
            y: select_vec(&self.y, idx),
        }
    }
}

impl SimulatorDataset {
    pub fn new(x0: DMatrix<f64>, x1: DMatrix<f64>, y0: DVector<f64>, y1: DVector<f64>) -> Result<Self> {
        let d = Self { x0, x1, y0, y1 };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.x0.nrows();
        if self.x1.nrows() != m || self.y0.len() != m || self.y1.len() != m {
            return invalid("simulator fields must share one row count");
        }
        if self.x0.ncols() != self.x1.ncols() {
            return invalid("simulator covariate blocks differ in width");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y0.is_empty()
    }

    pub fn x(&self, arm: u8) -> &DMatrix<f64> {
        if arm == 0 {
            &self.x0
        } else {
            &self.x1
        }
    }

    pub fn y(&self, arm: u8) -> &DVector<f64> {
        if arm == 0 {
            &self.y0
        } else {
            &self.y1
        }
    }

    pub fn tau(&self) -> DVector<f64> {
        &self.y1 - &self.y0
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x0: select_rows(&self.x0, idx),
            x1: select_rows(&self.x1, idx),
            y0: select_vec(&self.y0, idx),
            y1: select_vec(&self.y1, idx),
        }
    }
}

impl EvalDataset {
    pub fn validate(&self) -> Result<()> {
        let m = self.x.nrows();
        if self.t.len() != m
            || self.y0.len() != m
            || self.y1.len() != m
            || self.tau.len() != m
            || self.z.nrows() != m
        {
            return invalid("eval fields must share one row count");
        }
        check_treatments(&self.t)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Factual view of the eval rows.
    pub fn observed(&self) -> ObservationalDataset {
        let y = DVector::from_iterator(
            self.len(),
            self.t
                .iter()
                .enumerate()
                .map(|(i, &t)| if t == 1 { self.y1[i] } else { self.y0[i] }),
        );
        ObservationalDataset {
            x: self.x.clone(),
            t: self.t.clone(),
            y,
        }
    }
}
