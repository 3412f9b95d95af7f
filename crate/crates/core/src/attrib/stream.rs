//! Whole-stream attribution: routes tokens to channels, runs the per-channel
//! steppers, and assembles per-token speaker labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attrib::cluster::recluster;
use crate::attrib::stepper::{Resolution, SdStepper, SidStepper};
use crate::attrib::{AttribConfig, AttribError, AttributionMode};
use crate::serial::{channel_assignment, SerializedStream, Symbol, TokenEvent};
use crate::speaker::{SpeakerProfile, TVector};

/// Extra decision latency a D-word finalization delay adds on top of the
/// recognizer's algorithmic latency: D times the mean word duration of the
/// corpus, in seconds.
pub fn delay_latency_seconds(events: &[TokenEvent], delay_words: usize) -> f64 {
    if events.is_empty() {
        return 0.0;
    }
    let mean = events.iter().map(|e| e.duration).sum::<f64>() / events.len() as f64;
    delay_words as f64 * mean
}

/// One attributed token. `global_index` counts non-marker tokens in stream
/// order; `final_at_token_index` is the global index of the token whose
/// arrival fixed this token's label (the stream's last token when the label
/// was only resolved by the stream ending). In diarization mode labels stay
/// provisional until the last recluster, so the index marks when the token's
/// segment entered clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAttribution {
    pub token: String,
    pub channel: usize,
    pub speaker: String,
    pub global_index: usize,
    pub final_at_token_index: usize,
}

/// A detected speaker change, located both on its channel and in the global
/// token order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeEvent {
    pub channel: usize,
    pub channel_pos: usize,
    pub global_pos: usize,
}

/// A finalized segment in channel-local token positions. Diarization
/// segments carry the embedding that represented them during clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub channel: usize,
    pub start: usize,
    pub end: usize,
    pub speaker: String,
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionOutcome {
    /// One entry per non-marker token, in stream order.
    pub tokens: Vec<TokenAttribution>,
    pub changes: Vec<ChangeEvent>,
    pub segments: Vec<SegmentRecord>,
    /// Diarization only: the segment-to-cluster assignment after each
    /// recluster, in emission order. While fewer segments than the oracle
    /// count exist, the snapshot is the identity labeling.
    pub history: Vec<Vec<usize>>,
}

struct StreamLayout {
    /// (token text, channel) per global index.
    tokens: Vec<(String, usize)>,
    /// Global indices of each channel's tokens, in order.
    channel_tokens: Vec<Vec<usize>>,
}

fn layout(stream: &SerializedStream) -> Result<StreamLayout, AttribError> {
    let assignment = channel_assignment(stream)?;
    let mut tokens = Vec::new();
    let mut channel_tokens = vec![Vec::new(); stream.max_channels];
    for (entry, channel) in stream.entries.iter().zip(&assignment) {
        let (Symbol::Token(text), Some(ch)) = (entry, channel) else { continue };
        channel_tokens[*ch].push(tokens.len());
        tokens.push((text.clone(), *ch));
    }
    Ok(StreamLayout { tokens, channel_tokens })
}

/// Attributes every token of a serialized hypothesis to a speaker, feeding
/// each channel's t-vectors through the mode's change detector in stream
/// order. Identification labels tokens with profile speaker ids;
/// diarization clusters segment embeddings into the oracle speaker count and
/// labels tokens `spk0`, `spk1`, ... in order of first appearance.
pub fn attribute_stream(
    stream: &SerializedStream,
    tvectors: &[TVector],
    mode: AttributionMode,
    profiles: &[SpeakerProfile],
    config: &AttribConfig,
) -> Result<AttributionOutcome, AttribError> {
    let layout = layout(stream)?;
    if tvectors.len() != layout.tokens.len() {
        return Err(AttribError::TVectorCountMismatch {
            expected: layout.tokens.len(),
            got: tvectors.len(),
        });
    }
    match mode {
        AttributionMode::Sid => run_sid(&layout, tvectors, profiles, config),
        AttributionMode::Sd { oracle_speakers } => {
            run_sd(&layout, tvectors, oracle_speakers, config)
        }
    }
}

fn run_sid(
    layout: &StreamLayout,
    tvectors: &[TVector],
    profiles: &[SpeakerProfile],
    config: &AttribConfig,
) -> Result<AttributionOutcome, AttribError> {
    let mut steppers = Vec::with_capacity(layout.channel_tokens.len());
    for _ in 0..layout.channel_tokens.len() {
        steppers.push(SidStepper::new(profiles, config.delay_words, config.finalize)?);
    }
    for (g, (_, ch)) in layout.tokens.iter().enumerate() {
        steppers[*ch].step(&tvectors[g].embedding);
    }
    let last_global = layout.tokens.len().saturating_sub(1);
    let mut tokens: Vec<Option<TokenAttribution>> = vec![None; layout.tokens.len()];
    let mut changes = Vec::new();
    let mut segments = Vec::new();
    for (ch, stepper) in steppers.into_iter().enumerate() {
        let locals = &layout.channel_tokens[ch];
        let (segs, change_positions) = stepper.finish();
        for pos in change_positions {
            changes.push(ChangeEvent { channel: ch, channel_pos: pos, global_pos: locals[pos] });
        }
        for seg in segs {
            let speaker = &profiles[seg.label].speaker_id;
            for pos in seg.start..=seg.end {
                let g = locals[pos];
                let final_at = match seg.resolution {
                    Resolution::AtToken(f) => locals[pos.max(f)],
                    Resolution::AtFlush => last_global,
                };
                tokens[g] = Some(TokenAttribution {
                    token: layout.tokens[g].0.clone(),
                    channel: ch,
                    speaker: speaker.clone(),
                    global_index: g,
                    final_at_token_index: final_at,
                });
            }
            segments.push(SegmentRecord {
                channel: ch,
                start: seg.start,
                end: seg.end,
                speaker: speaker.clone(),
                embedding: None,
            });
        }
    }
    changes.sort_by_key(|c| c.global_pos);
    let tokens = tokens.into_iter().map(|t| t.expect("segments cover the channel")).collect();
    Ok(AttributionOutcome { tokens, changes, segments, history: Vec::new() })
}

fn extend_history(
    embeddings: &[Vec<f64>],
    oracle_k: usize,
    config: &AttribConfig,
    history: &mut Vec<Vec<usize>>,
) -> Result<(), AttribError> {
    let assignments = if embeddings.len() < oracle_k {
        (0..embeddings.len()).collect()
    } else {
        recluster(embeddings, oracle_k, config)?.assignments
    };
    history.push(assignments);
    Ok(())
}

fn run_sd(
    layout: &StreamLayout,
    tvectors: &[TVector],
    oracle_k: usize,
    config: &AttribConfig,
) -> Result<AttributionOutcome, AttribError> {
    assert!(oracle_k > 0, "diarization needs a positive speaker count");
    let mut steppers: Vec<SdStepper> = (0..layout.channel_tokens.len())
        .map(|_| SdStepper::new(config.sd_threshold, config.delay_words))
        .collect();
    let mut emission_embeddings: Vec<Vec<f64>> = Vec::new();
    // Emission key (channel, segment start) to (emission index, global
    // position at which the embedding was taken).
    let mut emission_at: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    let mut history = Vec::new();
    for (g, (_, ch)) in layout.tokens.iter().enumerate() {
        if let Some(em) = steppers[*ch].step(&tvectors[g].embedding) {
            emission_at.insert((*ch, em.segment_start), (emission_embeddings.len(), g));
            emission_embeddings.push(tvectors[g].embedding.clone());
            extend_history(&emission_embeddings, oracle_k, config, &mut history)?;
        }
    }
    let last_global = layout.tokens.len().saturating_sub(1);
    let mut changes = Vec::new();
    let mut channel_segments = Vec::new();
    for (ch, stepper) in steppers.into_iter().enumerate() {
        let locals = &layout.channel_tokens[ch];
        let (segs, flush, change_positions) = stepper.finish();
        if let Some(em) = flush {
            let seg = segs
                .iter()
                .find(|s| s.start == em.segment_start)
                .expect("flush emission names the trailing segment");
            emission_at
                .insert((ch, em.segment_start), (emission_embeddings.len(), last_global));
            emission_embeddings.push(seg.embedding.clone());
            extend_history(&emission_embeddings, oracle_k, config, &mut history)?;
        }
        for pos in change_positions {
            changes.push(ChangeEvent { channel: ch, channel_pos: pos, global_pos: locals[pos] });
        }
        for seg in segs {
            channel_segments.push((ch, seg));
        }
    }
    let final_assignments = history.last().cloned().unwrap_or_default();
    let mut tokens: Vec<Option<TokenAttribution>> = vec![None; layout.tokens.len()];
    let mut segments = Vec::new();
    for (ch, seg) in channel_segments {
        let locals = &layout.channel_tokens[ch];
        let (emission_index, emit_global) = emission_at[&(ch, seg.start)];
        let speaker = format!("spk{}", final_assignments[emission_index]);
        for pos in seg.start..=seg.end {
            let g = locals[pos];
            tokens[g] = Some(TokenAttribution {
                token: layout.tokens[g].0.clone(),
                channel: ch,
                speaker: speaker.clone(),
                global_index: g,
                final_at_token_index: emit_global.max(g),
            });
        }
        segments.push(SegmentRecord {
            channel: ch,
            start: seg.start,
            end: seg.end,
            speaker,
            embedding: Some(seg.embedding),
        });
    }
    changes.sort_by_key(|c| c.global_pos);
    let tokens = tokens.into_iter().map(|t| t.expect("segments cover the channel")).collect();
    Ok(AttributionOutcome { tokens, changes, segments, history })
}
