//! Dense numeric core: matrices, layer primitives with hand-written
//! backward passes, Adam, dropout, checkpoints and finite-difference
//! gradient checks.

mod adam;
mod checkpoint;
mod gradcheck;
mod layers;
mod matrix;
mod params;
mod scalar;

use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use gradcheck::{grad_check, grad_check_params, numerical_gradient, relative_error, REL_ERROR_FLOOR};
pub use layers::{
    affine, affine_backward, conv_seq, conv_seq_backward, dropout, log_softmax, max_over_time,
    piecewise_max, softmax, softmax_xent, AffineGrads, ConvGrads, DropoutMask, Pooled,
};
pub use matrix::Matrix;
pub use params::{Param, ParamId, ParamSet};
pub use scalar::Scalar;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("sequence of length {len} is shorter than filter width {width}")]
    SequenceTooShort { len: usize, width: usize },
    #[error("{0}: empty input")]
    EmptyInput(&'static str),
    #[error("invalid segment cuts ({cut1}, {cut2}) for length {len}")]
    CutOrder { cut1: usize, cut2: usize, len: usize },
    #[error("target class {target} invalid for {classes} classes")]
    InvalidTarget { target: usize, classes: usize },
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f64),
    #[error("{0}: non-finite value encountered")]
    NonFinite(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
