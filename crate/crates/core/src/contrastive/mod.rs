//! Recovery of simulator representation extractors from paired counterfactual covariates.

mod align;
mod encoder;
mod infonce;
mod train;

pub use align::{alignment_residual, oracle_linear_map, pairwise_linear_map, AlignmentReport, MapKind};
pub use encoder::{Encoder, EncoderArm, EncoderKind, MlpMap, NORM_EPS};
pub use infonce::{anchor_infonce, infonce_embeddings, infonce_loss};
pub use train::{train_contrastive, ContrastiveConfig, ContrastiveFit};
