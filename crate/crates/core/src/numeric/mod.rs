//! Dense `f64` arrays with define-by-run reverse-mode differentiation.

mod array;
mod gradcheck;
mod tape;

pub use array::Array;
pub use gradcheck::{finite_diff_check, Evaluation, FdReport, ParamMap};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS, MASKED_LOGIT};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("{0}")]
    Contract(String),
}

/// One binary focal-loss term for probability `p` and target bit
/// `positive`. `p` is clamped to `[1e-12, 1 - 1e-12]` before the log.
pub fn focal_term(p: f64, positive: bool, alpha: f64, gamma: f64) -> f64 {
    let p = tape::clamp_prob(p);
    if positive {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}
