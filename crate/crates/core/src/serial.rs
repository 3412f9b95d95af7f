//! Serialized-stream format for multi-talker transcripts.
//!
//! Several time-stamped per-speaker token streams are merged into a single
//! chronological stream; a channel-change marker is inserted between adjacent
//! tokens of different speakers. Recognizers emit this flat stream, and the
//! deserializer splits it back into virtual output channels by advancing the
//! active channel at every marker.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved marker written between adjacent tokens of different speakers.
pub const CC: &str = "<cc>";

/// One spoken token with its ground-truth timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEvent {
    pub token: String,
    pub speaker: String,
    /// Start time in seconds.
    pub start: f64,
    /// Duration in seconds.
    pub duration: f64,
    /// Virtual output channel; assigned by the deserializer, absent before.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<usize>,
}

impl TokenEvent {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// A symbol of the serialized stream: either a vocabulary token or the
/// channel-change marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Symbol {
    Token(String),
    ChannelChange,
}

impl Symbol {
    pub fn is_cc(&self) -> bool {
        matches!(self, Symbol::ChannelChange)
    }

    pub fn as_str(&self) -> &str {
        match self {
            Symbol::Token(t) => t,
            Symbol::ChannelChange => CC,
        }
    }
}

/// Chronologically serialized transcript of a whole mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct SerializedStream {
    pub entries: Vec<Symbol>,
    /// Overlap budget the stream was serialized under; the deserializer
    /// cycles through this many virtual channels.
    pub max_channels: usize,
}

impl SerializedStream {
    /// Renders as whitespace-separated plain text with the literal marker.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(Symbol::as_str)
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Parses whitespace-separated symbols.
    pub fn from_text(text: &str, max_channels: usize) -> Result<Self, SerialError> {
        if max_channels < 1 {
            return Err(SerialError::MalformedStream("zero channel budget".into()));
        }
        let entries: Vec<Symbol> = text
            .split_whitespace()
            .map(|w| {
                if w == CC {
                    Symbol::ChannelChange
                } else {
                    Symbol::Token(w.to_string())
                }
            })
            .collect();
        Ok(SerializedStream { entries, max_channels })
    }

    pub fn token_count(&self) -> usize {
        self.entries.iter().filter(|s| !s.is_cc()).count()
    }
}

/// Tokens routed to one virtual output channel, in emission order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTranscript {
    pub channel: usize,
    pub tokens: Vec<TokenEvent>,
}

#[derive(Debug, Error)]
pub enum SerialError {
    #[error("more than {budget} utterances overlap near t={at:.3}")]
    OverlapBudgetExceeded { budget: usize, at: f64 },
    #[error("no tokens in any input stream")]
    EmptyInput,
    #[error("stream {stream} is not sorted by start time at token {index}")]
    UnsortedStream { stream: usize, index: usize },
    #[error("input token equals the reserved marker {CC:?}")]
    ReservedToken,
    #[error("malformed stream: {0}")]
    MalformedStream(String),
}

/// Merges per-speaker streams into one global chronological order. Ties on
/// start time are broken by input stream index (earlier stream first), which
/// the stable sort provides once streams are concatenated in order.
pub fn merge_streams(streams: &[Vec<TokenEvent>]) -> Result<Vec<TokenEvent>, SerialError> {
    for (si, stream) in streams.iter().enumerate() {
        for (i, pair) in stream.windows(2).enumerate() {
            if pair[1].start < pair[0].start {
                return Err(SerialError::UnsortedStream { stream: si, index: i + 1 });
            }
        }
    }
    let mut merged: Vec<TokenEvent> = streams.iter().flatten().cloned().collect();
    if merged.is_empty() {
        return Err(SerialError::EmptyInput);
    }
    if merged.iter().any(|e| e.token == CC) {
        return Err(SerialError::ReservedToken);
    }
    merged.sort_by(|a, b| a.start.partial_cmp(&b.start).expect("NaN start time"));
    Ok(merged)
}

/// Checks that at no instant more than `budget` utterance spans overlap.
/// A span is the closed-open interval from the first token's start to the
/// last token's end, so back-to-back utterances do not count as overlapping.
fn check_overlap_budget(streams: &[Vec<TokenEvent>], budget: usize) -> Result<(), SerialError> {
    let mut edges: Vec<(f64, i32)> = Vec::new();
    for stream in streams {
        let (Some(first), Some(last)) = (stream.first(), stream.last()) else {
            continue;
        };
        edges.push((first.start, 1));
        edges.push((last.end(), -1));
    }
    edges.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut active = 0i64;
    for (at, delta) in edges {
        active += i64::from(delta);
        if active > budget as i64 {
            return Err(SerialError::OverlapBudgetExceeded { budget, at });
        }
    }
    Ok(())
}

/// Serializes per-speaker token streams under an overlap budget of
/// `max_channels` simultaneous utterances.
pub fn serialize(
    streams: &[Vec<TokenEvent>],
    max_channels: usize,
) -> Result<SerializedStream, SerialError> {
    if max_channels < 1 {
        return Err(SerialError::MalformedStream("zero channel budget".into()));
    }
    check_overlap_budget(streams, max_channels)?;
    let merged = merge_streams(streams)?;
    let mut entries = Vec::with_capacity(merged.len() * 2);
    let mut prev_speaker: Option<&str> = None;
    for event in &merged {
        if let Some(prev) = prev_speaker {
            if prev != event.speaker {
                entries.push(Symbol::ChannelChange);
            }
        }
        entries.push(Symbol::Token(event.token.clone()));
        prev_speaker = Some(&event.speaker);
    }
    Ok(SerializedStream { entries, max_channels })
}

/// Channel of every entry: tokens carry the channel they are routed to, the
/// marker itself carries `None`. The active channel starts at 0 and advances
/// round-robin at each marker (a plain toggle when the budget is 2).
pub fn channel_assignment(stream: &SerializedStream) -> Result<Vec<Option<usize>>, SerialError> {
    if stream.max_channels < 1 {
        return Err(SerialError::MalformedStream("zero channel budget".into()));
    }
    if let Some(Symbol::ChannelChange) = stream.entries.first() {
        return Err(SerialError::MalformedStream("stream starts with a channel change".into()));
    }
    for pair in stream.entries.windows(2) {
        if pair[0].is_cc() && pair[1].is_cc() {
            return Err(SerialError::MalformedStream("adjacent channel changes".into()));
        }
    }
    if let Some(Symbol::ChannelChange) = stream.entries.last() {
        return Err(SerialError::MalformedStream("stream ends with a channel change".into()));
    }
    let mut active = 0usize;
    let mut out = Vec::with_capacity(stream.entries.len());
    for entry in &stream.entries {
        match entry {
            Symbol::ChannelChange => {
                active = (active + 1) % stream.max_channels;
                out.push(None);
            }
            Symbol::Token(_) => out.push(Some(active)),
        }
    }
    Ok(out)
}

/// Splits a serialized stream into per-channel transcripts. Without
/// ground-truth events the token timing is unknown, so tokens carry the
/// symbol, an empty speaker, zero times, and their assigned channel.
pub fn deserialize(stream: &SerializedStream) -> Result<Vec<ChannelTranscript>, SerialError> {
    let channels = channel_assignment(stream)?;
    let mut out: Vec<ChannelTranscript> = (0..stream.max_channels)
        .map(|channel| ChannelTranscript { channel, tokens: Vec::new() })
        .collect();
    for (entry, channel) in stream.entries.iter().zip(&channels) {
        let (Symbol::Token(token), Some(ch)) = (entry, channel) else { continue };
        out[*ch].tokens.push(TokenEvent {
            token: token.clone(),
            speaker: String::new(),
            start: 0.0,
            duration: 0.0,
            channel: Some(*ch),
        });
    }
    Ok(out)
}

/// Like [`deserialize`], but fills each channel token from the matching
/// ground-truth event. `events` must hold the merged chronological events of
/// the same mixture, one per non-marker symbol.
pub fn deserialize_with_events(
    stream: &SerializedStream,
    events: &[TokenEvent],
) -> Result<Vec<ChannelTranscript>, SerialError> {
    if events.len() != stream.token_count() {
        return Err(SerialError::MalformedStream(format!(
            "{} events for {} stream tokens",
            events.len(),
            stream.token_count()
        )));
    }
    let channels = channel_assignment(stream)?;
    let mut out: Vec<ChannelTranscript> = (0..stream.max_channels)
        .map(|channel| ChannelTranscript { channel, tokens: Vec::new() })
        .collect();
    let mut next_event = 0;
    for (entry, channel) in stream.entries.iter().zip(&channels) {
        let (Symbol::Token(token), Some(ch)) = (entry, channel) else { continue };
        let event = &events[next_event];
        next_event += 1;
        if event.token != *token {
            return Err(SerialError::MalformedStream(format!(
                "event token {:?} does not match stream token {:?}",
                event.token, token
            )));
        }
        let mut placed = event.clone();
        placed.channel = Some(*ch);
        out[*ch].tokens.push(placed);
    }
    Ok(out)
}

/// Rebuilds the serialized entry list from a channel-per-token assignment,
/// inserting a marker wherever the channel switches. Inverse of
/// [`channel_assignment`] restricted to token positions.
pub fn reserialize(tokens: &[(String, usize)], max_channels: usize) -> SerializedStream {
    let mut entries = Vec::with_capacity(tokens.len() * 2);
    let mut prev: Option<usize> = None;
    for (token, channel) in tokens {
        if let Some(p) = prev {
            if p != *channel {
                entries.push(Symbol::ChannelChange);
            }
        }
        entries.push(Symbol::Token(token.clone()));
        prev = Some(*channel);
    }
    SerializedStream { entries, max_channels }
}
