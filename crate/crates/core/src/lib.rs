//! CATE estimation from post-treatment covariates with simulator supervision.

pub mod contrastive;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
