//! Streaming speaker attribution over deserialized token channels.
//!
//! Two decision procedures share one state-machine skeleton. Identification
//! scores each token's embedding against enrolled profiles and reacts to raw
//! label flips; diarization reacts to cosine drops between adjacent
//! embeddings and clusters the resulting segment embeddings from scratch
//! every time a new one appears. Both delay their decision a fixed number of
//! words past a detected change and ignore further changes while one is
//! pending.

pub mod cluster;
pub mod stepper;
pub mod stream;

pub use cluster::{recluster, ClusterResult};
pub use stepper::{LabeledSegment, Resolution, SdSegment, SdStepper, SidStepper};
pub use stream::{
    attribute_stream, delay_latency_seconds, AttributionOutcome, ChangeEvent, SegmentRecord,
    TokenAttribution,
};

use serde::{Deserialize, Serialize};

use crate::serial::SerialError;

#[derive(Debug, thiserror::Error)]
pub enum AttribError {
    #[error("identification needs at least one enrolled profile")]
    NoProfiles,
    #[error("{have} segments cannot form {need} clusters")]
    TooFewSegments { have: usize, need: usize },
    #[error("stream has {expected} tokens but {got} embeddings were supplied")]
    TVectorCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Serial(#[from] SerialError),
}

/// Which decision procedure drives the attribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributionMode {
    /// Identification against enrolled profiles.
    Sid,
    /// Diarization by change detection plus clustering into the known
    /// speaker count.
    Sd { oracle_speakers: usize },
}

/// How a pending change resolves once the delay elapses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinalizeRule {
    /// Take the raw label of the token at the finalization position.
    RawAtFinalization,
    /// Majority vote over the raw labels of the pending window; ties prefer
    /// the raw label at finalization, then the lowest profile index.
    MajorityVote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttribConfig {
    /// Words to wait after a detected change before fixing the decision.
    pub delay_words: usize,
    /// Adjacent-cosine change threshold for diarization.
    pub sd_threshold: f64,
    pub finalize: FinalizeRule,
    /// Seed for the clustering restarts.
    pub seed: u64,
    /// Upper bound of the row-binarization neighbor search.
    pub max_binarize_neighbors: usize,
}

impl Default for AttribConfig {
    fn default() -> AttribConfig {
        AttribConfig {
            delay_words: 2,
            sd_threshold: 0.98,
            finalize: FinalizeRule::RawAtFinalization,
            seed: 0,
            max_binarize_neighbors: 20,
        }
    }
}
