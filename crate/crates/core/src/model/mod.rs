//! Query-grouping transformer detector.

mod config;
mod network;
mod params;
mod prediction;

pub use config::{MatchCostKind, ModelConfig};
pub use network::{
    branch_mask, decode_with_groups, encode, encode_patches, forward, forward_on_tape, infer, patchify,
    positional_encoding, shape_header, Bound, BranchVars, Branches, ForwardVars,
};
pub use params::{init_params, parameter_count, param_shapes, reference_grid, Parameters};
pub use prediction::{predict_shapes, PredictedShape, PredictionSet, LINE_MERGE_DISTANCE};

use thiserror::Error;

use crate::numeric::NumericError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[cfg(test)]
mod tests;
