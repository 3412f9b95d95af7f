//! Evaluation metrics for attributed multi-talker transcription.

pub mod assignment;
pub mod cpwer;
pub mod sawer;
pub mod wer;

pub use assignment::min_cost_assignment;
pub use cpwer::{cpwer, CpWerResult, SpeakerTranscript};
pub use sawer::{sawer, AttributedToken, SaRates};
pub use wer::{align, wer, AlignedPair, AlignmentResult};
