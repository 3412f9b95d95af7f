//! Minimal dense numeric kernel: f64 matrices, chunked attention masks,
//! reverse-mode gradients, and the layers the model stack is built from.

mod gradcheck;
mod mask;
mod matrix;
mod ops;
mod optim;
mod params;
mod tape;

pub use gradcheck::grad_check;
pub use mask::MaskSpec;
pub use matrix::{cosine, l2_normalize, Matrix};
pub use ops::{lstm_step, lstm_zero_state, mha, row_norm, LstmState, LstmVars};
pub use optim::{AdamConfig, AdamW, LrSchedule};
pub use params::{BoundParams, ParamSet};
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("{op}: dimension mismatch: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },
    #[error("non-finite value in {0}")]
    NonFiniteValue(&'static str),
    #[error("{0}: empty input")]
    EmptyInput(&'static str),
}
