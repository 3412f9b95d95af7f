//! Token-level speaker embeddings: a speaker encoder that cross-attends into
//! the recognizer's activations frame by frame, and an embedding decoder that
//! turns the activation at each token's emission frame into one embedding per
//! token.

pub mod loss;
pub mod model;
pub mod train;

pub use loss::{cosine_softmax_loss, speaker_loss};
pub use model::{stream_tvectors, SpkConfig, SpkModel};
pub use train::{train_speaker_module, SpeakerSample, SpkTrainConfig};

use serde::{Deserialize, Serialize};

use crate::asr::AsrError;
use crate::kernel::{l2_normalize, KernelError};

#[derive(Debug, thiserror::Error)]
pub enum SpkError {
    #[error("recognizer activations cover {asr} frames, speaker encoder produced {speaker}")]
    FrameCountMismatch { asr: usize, speaker: usize },
    #[error("emission frame {frame} outside the {frames} encoded frames")]
    FrameOutOfRange { frame: usize, frames: usize },
    #[error("no scorable token: every token is a channel-change marker")]
    EmptyReference,
    #[error("speaker {0:?} has no profile")]
    UnknownSpeaker(String),
    #[error(transparent)]
    Asr(#[from] AsrError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Speaker embedding of one recognized token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TVector {
    pub embedding: Vec<f64>,
    pub token_index: usize,
    pub emission_frame: usize,
}

/// Enrolled speaker: an identifier plus a unit-norm reference vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub speaker_id: String,
    pub dvector: Vec<f64>,
}

impl SpeakerProfile {
    /// Builds a profile, normalizing the vector to unit length.
    pub fn new(speaker_id: impl Into<String>, mut dvector: Vec<f64>) -> SpeakerProfile {
        l2_normalize(&mut dvector);
        SpeakerProfile { speaker_id: speaker_id.into(), dvector }
    }
}
