//! Synthetic corpus generation at desk scale.
//!
//! Mixtures are built from a fixed speaker universe with controlled
//! embedding geometry: utterances get random lengths, vocabulary tokens, and
//! start delays under the serialization overlap budget, features follow the
//! merged token order as recognizable per-token blocks, and oracle speaker
//! embeddings are drawn with exact cosine targets so attribution logic can
//! be evaluated independently of representation learning.

pub mod mixture;
pub mod sweep;
pub mod world;

pub use mixture::{generate_corpus, generate_mixture, rapid_turn_mixture, Mixture, MixtureSpec};
pub use sweep::{run_delay_sweep, DelayRow, SweepMode};
pub use world::SpeakerWorld;

use crate::asr::AsrError;
use crate::attrib::AttribError;
use crate::serial::SerialError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("infeasible simulation spec: {0}")]
    InfeasibleSpec(String),
    #[error(transparent)]
    Serial(#[from] SerialError),
    #[error(transparent)]
    Attrib(#[from] AttribError),
    #[error(transparent)]
    Asr(#[from] AsrError),
}

/// Mixes a sample index into a base seed so corpus entries get independent
/// but reproducible generators (splitmix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
