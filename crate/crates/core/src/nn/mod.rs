//! Gradient-trained estimators with network outcome heads.

mod mlp;
mod trainer;

pub use mlp::{mlp_forward, mlp_gradients, Mlp, MlpGrad, DEFAULT_HIDDEN};
pub use trainer::{
    fit_heads_nn, select_lambda_f, simulator_as_factual, stratified_split, train_simponet_nn, NnFitReport,
    NnObjective, Optimizer, TrainConfig, ROUNDOFF_TIE,
};
