//! Closed-form estimators for the linear setting.

mod altmin;
mod analytic;
mod closed_form;
mod model;

pub use altmin::{fit_simponet_linear, AltMinConfig, FitReport, DESCENT_SLACK, MIN_LAMBDA_F};
pub use analytic::analytic_cate_error;
pub use closed_form::{fit_mu_only_linear, fit_real_only_linear, fit_sim_only_linear};
pub use model::{predict_cate, CateModel, EstimatorKind, Head};
