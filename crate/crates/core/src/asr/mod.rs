//! Streaming transformer transducer: encoder, prediction and joint networks,
//! the alignment-lattice training objective, forced alignment, and
//! time-synchronous beam decoding.

pub mod decode;
pub mod loss;
pub mod model;
pub mod train;
pub mod vocab;

pub use decode::{algorithmic_latency, beam_decode, DecodeHypothesis, DecodedToken, StopPolicy};
pub use loss::{lattice_log_prob, transducer_loss, viterbi_align, viterbi_from_lattice};
pub use model::{AsrConfig, AsrModel, Lattice};
pub use train::{train_asr, TrainConfig};
pub use vocab::{Vocab, BLANK_ID, BLANK_SYMBOL, CC_ID};

use crate::kernel::KernelError;

#[derive(Debug, thiserror::Error)]
pub enum AsrError {
    #[error("no input frames")]
    EmptyInput,
    #[error("target of {target} tokens exceeds {frames} encoder frames")]
    TargetLongerThanFrames { target: usize, frames: usize },
    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),
    #[error("vocabulary rejects {0:?}: {1}")]
    BadVocabulary(String, &'static str),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}
