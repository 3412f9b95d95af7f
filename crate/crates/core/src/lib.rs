//! Streaming multi-talker transcription with speaker attribution.
//!
//! The engine recognizes overlapping speech as a single serialized token
//! stream with channel-change markers, extracts one speaker embedding per
//! recognized token, and attributes words to speakers on the fly, either
//! against enrolled profiles or by online clustering.
//!
//! Module map:
//!
//! * [`serial`] - serialized-stream format: merging, channel changes,
//!   channel recovery
//! * [`kernel`] - dense f64 matrices, masked attention, reverse-mode
//!   gradients, optimizer
//! * [`asr`] - streaming transformer-transducer recognizer
//! * [`speaker`] - per-token speaker embedding extractor
//! * [`attrib`] - streaming identification / diarization state machines and
//!   spectral clustering
//! * [`metrics`] - word and speaker-attributed error rates
//! * [`sim`] - synthetic mixture generator and delay sweeps
//! * [`io`] - on-disk formats (JSONL streams, profiles, checkpoints)

pub mod asr;
pub mod attrib;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod serial;
pub mod sim;
pub mod speaker;
