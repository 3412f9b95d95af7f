//! Attribution error as a function of the finalization delay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attrib::{
    attribute_stream, delay_latency_seconds, AttribConfig, AttributionMode, AttributionOutcome,
};
use crate::metrics::min_cost_assignment;
use crate::serial::channel_assignment;
use crate::sim::{Mixture, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepMode {
    Sid,
    Sd,
}

/// One sweep row: token-level attribution errors and change-detection
/// misses over the whole corpus at a fixed delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayRow {
    pub delay_words: usize,
    pub token_errors: usize,
    pub total_tokens: usize,
    pub missed_changes: usize,
    pub total_changes: usize,
    /// Decision latency the delay adds: D times the corpus mean word
    /// duration, in seconds.
    pub mean_extra_latency_seconds: f64,
}

impl DelayRow {
    pub fn error_rate(&self) -> f64 {
        self.token_errors as f64 / self.total_tokens.max(1) as f64
    }

    pub fn miss_rate(&self) -> f64 {
        self.missed_changes as f64 / self.total_changes.max(1) as f64
    }
}

/// Ground-truth change positions per channel: channel-local token positions
/// whose speaker differs from the previous token on that channel.
fn true_changes(mix: &Mixture) -> Result<Vec<(usize, usize)>, SimError> {
    let assignment = channel_assignment(&mix.target)?;
    let mut last_speaker: BTreeMap<usize, (usize, String)> = BTreeMap::new();
    let mut changes = Vec::new();
    let mut g = 0;
    for ch in assignment.iter().flatten() {
        let speaker = &mix.speakers[g];
        match last_speaker.get(ch) {
            Some((pos, prev)) if prev != speaker => changes.push((*ch, pos + 1)),
            _ => {}
        }
        let pos = last_speaker.get(ch).map_or(0, |(p, _)| p + 1);
        last_speaker.insert(*ch, (pos, speaker.clone()));
        g += 1;
    }
    Ok(changes)
}

/// Tokens attributed to the wrong speaker. Identification labels compare
/// directly; diarization cluster labels are mapped to true speakers by the
/// assignment minimizing total errors, as anonymous labels carry no names.
fn count_errors(mix: &Mixture, out: &AttributionOutcome, mode: SweepMode) -> usize {
    match mode {
        SweepMode::Sid => out
            .tokens
            .iter()
            .zip(&mix.speakers)
            .filter(|(t, truth)| &&t.speaker != truth)
            .count(),
        SweepMode::Sd => {
            let mut clusters: Vec<&str> = Vec::new();
            let mut speakers: Vec<&str> = Vec::new();
            let mut joint: BTreeMap<(usize, usize), i64> = BTreeMap::new();
            let mut cluster_sizes: Vec<i64> = Vec::new();
            for (t, truth) in out.tokens.iter().zip(&mix.speakers) {
                let c = match clusters.iter().position(|&c| c == t.speaker) {
                    Some(i) => i,
                    None => {
                        clusters.push(&t.speaker);
                        cluster_sizes.push(0);
                        clusters.len() - 1
                    }
                };
                let s = match speakers.iter().position(|&s| s == truth.as_str()) {
                    Some(i) => i,
                    None => {
                        speakers.push(truth);
                        speakers.len() - 1
                    }
                };
                cluster_sizes[c] += 1;
                *joint.entry((c, s)).or_insert(0) += 1;
            }
            let n = clusters.len().max(speakers.len());
            let cost: Vec<Vec<i64>> = (0..n)
                .map(|c| {
                    (0..n)
                        .map(|s| {
                            if c >= clusters.len() {
                                0
                            } else {
                                cluster_sizes[c] - joint.get(&(c, s)).copied().unwrap_or(0)
                            }
                        })
                        .collect()
                })
                .collect();
            let (_, total) = min_cost_assignment(&cost);
            total as usize
        }
    }
}

/// Runs attribution over the corpus once per delay value and tabulates
/// per-token errors, missed ground-truth changes, and the extra decision
/// latency. Diarization uses each mixture's own speaker count as the oracle.
pub fn run_delay_sweep(
    corpus: &[Mixture],
    delays: &[usize],
    mode: SweepMode,
    base: &AttribConfig,
) -> Result<Vec<DelayRow>, SimError> {
    let all_events: Vec<_> = corpus.iter().flat_map(|m| m.events.iter().cloned()).collect();
    let mut rows = Vec::with_capacity(delays.len());
    for &delay in delays {
        let config = AttribConfig { delay_words: delay, ..base.clone() };
        let mut row = DelayRow {
            delay_words: delay,
            token_errors: 0,
            total_tokens: 0,
            missed_changes: 0,
            total_changes: 0,
            mean_extra_latency_seconds: delay_latency_seconds(&all_events, delay),
        };
        for mix in corpus {
            let mode_arg = match mode {
                SweepMode::Sid => AttributionMode::Sid,
                SweepMode::Sd => AttributionMode::Sd { oracle_speakers: mix.active.len() },
            };
            let out =
                attribute_stream(&mix.target, &mix.oracle_tvectors, mode_arg, &mix.pool, &config)?;
            row.token_errors += count_errors(mix, &out, mode);
            row.total_tokens += out.tokens.len();
            let truth = true_changes(mix)?;
            let detected: Vec<(usize, usize)> =
                out.changes.iter().map(|c| (c.channel, c.channel_pos)).collect();
            row.total_changes += truth.len();
            row.missed_changes += truth.iter().filter(|c| !detected.contains(c)).count();
        }
        rows.push(row);
    }
    Ok(rows)
}
