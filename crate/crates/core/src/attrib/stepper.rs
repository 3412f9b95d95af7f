//! Per-channel change-detection state machines.
//!
//! A stepper consumes one speaker embedding per token of its channel. Token
//! positions here are channel-local; the stream assembler maps them back to
//! global stream indices.
//!
//! Both steppers share the same timing discipline. A detected change at
//! position `c` opens a pending window and the decision is fixed when token
//! `c + delay` arrives. While a window is pending no further change can be
//! detected, so the earliest detectable next change sits at `c + delay + 1`.
//! The window that opens at stream start behaves the same way. A stream that
//! ends inside a pending window resolves it from what arrived.

use crate::attrib::{AttribError, FinalizeRule};
use crate::kernel::cosine;
use crate::speaker::SpeakerProfile;

/// How a segment's decision was fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    /// Decided when this channel-local token arrived.
    AtToken(usize),
    /// The stream ended before the delay elapsed; decided at end of stream.
    AtFlush,
}

/// A closed identification segment over channel-local positions
/// `start..=end`, labeled with a profile index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSegment {
    pub start: usize,
    pub end: usize,
    pub label: usize,
    pub resolution: Resolution,
}

/// Streaming identification against a fixed profile set.
pub struct SidStepper<'a> {
    profiles: &'a [SpeakerProfile],
    delay: usize,
    rule: FinalizeRule,
    pos: usize,
    raws: Vec<usize>,
    prev_raw: usize,
    /// Start position of the pending window, if one is open.
    pending: Option<usize>,
    /// Start of the segment currently being extended.
    open_start: usize,
    open_label: Option<usize>,
    segments: Vec<LabeledSegment>,
    changes: Vec<usize>,
}

impl<'a> SidStepper<'a> {
    pub fn new(
        profiles: &'a [SpeakerProfile],
        delay: usize,
        rule: FinalizeRule,
    ) -> Result<Self, AttribError> {
        if profiles.is_empty() {
            return Err(AttribError::NoProfiles);
        }
        Ok(SidStepper {
            profiles,
            delay,
            rule,
            pos: 0,
            raws: Vec::new(),
            prev_raw: 0,
            pending: None,
            open_start: 0,
            open_label: None,
            segments: Vec::new(),
            changes: Vec::new(),
        })
    }

    fn raw_label(&self, embedding: &[f64]) -> usize {
        let mut best = 0;
        let mut best_cos = cosine(embedding, &self.profiles[0].dvector);
        for (i, p) in self.profiles.iter().enumerate().skip(1) {
            let c = cosine(embedding, &p.dvector);
            if c > best_cos {
                best = i;
                best_cos = c;
            }
        }
        best
    }

    fn resolve(&self, change_pos: usize, final_pos: usize) -> usize {
        let at_final = self.raws[final_pos];
        match self.rule {
            FinalizeRule::RawAtFinalization => at_final,
            FinalizeRule::MajorityVote => {
                let mut counts = vec![0usize; self.profiles.len()];
                for &r in &self.raws[change_pos..=final_pos] {
                    counts[r] += 1;
                }
                let top = *counts.iter().max().unwrap();
                if counts[at_final] == top {
                    at_final
                } else {
                    counts.iter().position(|&c| c == top).unwrap()
                }
            }
        }
    }

    pub fn step(&mut self, embedding: &[f64]) {
        let raw = self.raw_label(embedding);
        self.raws.push(raw);
        if self.pos == 0 {
            self.pending = Some(0);
        } else if self.pending.is_none() && raw != self.prev_raw {
            self.segments.push(LabeledSegment {
                start: self.open_start,
                end: self.pos - 1,
                label: self.open_label.expect("previous segment was finalized"),
                resolution: Resolution::AtToken(self.open_start + self.delay),
            });
            self.changes.push(self.pos);
            self.open_start = self.pos;
            self.open_label = None;
            self.pending = Some(self.pos);
        }
        if let Some(c) = self.pending {
            if self.pos == c + self.delay {
                self.open_label = Some(self.resolve(c, self.pos));
                self.pending = None;
            }
        }
        self.prev_raw = raw;
        self.pos += 1;
    }

    /// Closes the trailing segment and returns all segments plus the
    /// channel-local change positions. An unresolved pending window takes its
    /// label from the tokens that did arrive.
    pub fn finish(mut self) -> (Vec<LabeledSegment>, Vec<usize>) {
        if self.pos > 0 {
            let last = self.pos - 1;
            let (label, resolution) = match self.open_label {
                Some(l) => (l, Resolution::AtToken(self.open_start + self.delay)),
                None => {
                    let c = self.pending.expect("unlabeled open segment has a pending window");
                    (self.resolve(c, last), Resolution::AtFlush)
                }
            };
            self.segments.push(LabeledSegment {
                start: self.open_start,
                end: last,
                label,
                resolution,
            });
        }
        (self.segments, self.changes)
    }
}

/// A closed diarization segment over channel-local positions `start..=end`.
/// The segment embedding is the t-vector taken at `embedding_at`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdSegment {
    pub start: usize,
    pub end: usize,
    pub embedding: Vec<f64>,
    pub embedding_at: usize,
    pub resolution: Resolution,
}

/// Streaming diarization change detection. Segment embeddings surface
/// through the return value of [`SdStepper::step`] as they are taken, so
/// the caller can recluster immediately.
pub struct SdStepper {
    threshold: f64,
    delay: usize,
    pos: usize,
    embeddings: Vec<Vec<f64>>,
    pending: Option<usize>,
    open_start: usize,
    /// Embedding position for the open segment once its delay elapsed.
    open_embedding_at: Option<usize>,
    closed: Vec<(usize, usize)>,
    changes: Vec<usize>,
}

/// Emission notice: the segment starting at `segment_start` just took the
/// current token's embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SdEmission {
    pub segment_start: usize,
}

impl SdStepper {
    pub fn new(threshold: f64, delay: usize) -> Self {
        SdStepper {
            threshold,
            delay,
            pos: 0,
            embeddings: Vec::new(),
            pending: None,
            open_start: 0,
            open_embedding_at: None,
            closed: Vec::new(),
            changes: Vec::new(),
        }
    }

    pub fn step(&mut self, embedding: &[f64]) -> Option<SdEmission> {
        if self.pos == 0 {
            self.pending = Some(0);
        } else if self.pending.is_none() {
            let prev = &self.embeddings[self.pos - 1];
            if cosine(embedding, prev) < self.threshold {
                self.closed.push((self.open_start, self.pos - 1));
                self.changes.push(self.pos);
                self.open_start = self.pos;
                self.open_embedding_at = None;
                self.pending = Some(self.pos);
            }
        }
        self.embeddings.push(embedding.to_vec());
        let mut emitted = None;
        if let Some(c) = self.pending {
            if self.pos == c + self.delay {
                self.open_embedding_at = Some(self.pos);
                self.pending = None;
                emitted = Some(SdEmission { segment_start: c });
            }
        }
        self.pos += 1;
        emitted
    }

    /// Closes the trailing segment and returns all segments with their
    /// embeddings, the flush emission if the last segment had not taken one
    /// yet, and the channel-local change positions.
    pub fn finish(mut self) -> (Vec<SdSegment>, Option<SdEmission>, Vec<usize>) {
        let mut flush = None;
        let mut segments = Vec::new();
        if self.pos > 0 {
            let last = self.pos - 1;
            self.closed.push((self.open_start, last));
            if self.open_embedding_at.is_none() {
                flush = Some(SdEmission { segment_start: self.open_start });
            }
            for (i, &(start, end)) in self.closed.iter().enumerate() {
                let is_last = i + 1 == self.closed.len();
                let (at, resolution) = if is_last && flush.is_some() {
                    (last, Resolution::AtFlush)
                } else if is_last {
                    let at = self.open_embedding_at.unwrap();
                    (at, Resolution::AtToken(at))
                } else {
                    (start + self.delay, Resolution::AtToken(start + self.delay))
                };
                segments.push(SdSegment {
                    start,
                    end,
                    embedding: self.embeddings[at].clone(),
                    embedding_at: at,
                    resolution,
                });
            }
        }
        (segments, flush, self.changes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn axis_profiles(n: usize, dim: usize) -> Vec<SpeakerProfile> {
        (0..n)
            .map(|i| {
                let mut v = vec![0.0; dim];
                v[i] = 1.0;
                SpeakerProfile::new(format!("spk{i}"), v)
            })
            .collect()
    }

    fn axis(i: usize, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn zero_delay_identification_matches_per_token_argmax() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        for _ in 0..50 {
            let profiles: Vec<SpeakerProfile> = (0..4)
                .map(|i| {
                    let v: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    SpeakerProfile::new(format!("p{i}"), v)
                })
                .collect();
            let tokens = rng.gen_range(1..12);
            let embeddings: Vec<Vec<f64>> = (0..tokens)
                .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let mut stepper =
                SidStepper::new(&profiles, 0, FinalizeRule::RawAtFinalization).unwrap();
            for e in &embeddings {
                stepper.step(e);
            }
            let (segments, _) = stepper.finish();
            let mut streamed = vec![usize::MAX; tokens];
            for seg in &segments {
                assert!(matches!(seg.resolution, Resolution::AtToken(f) if f == seg.start));
                for p in seg.start..=seg.end {
                    streamed[p] = seg.label;
                }
            }
            for (e, &got) in embeddings.iter().zip(&streamed) {
                let mut best = 0;
                for i in 1..profiles.len() {
                    if cosine(e, &profiles[i].dvector) > cosine(e, &profiles[best].dvector) {
                        best = i;
                    }
                }
                assert_eq!(got, best);
            }
        }
    }

    #[test]
    fn raw_flips_inside_a_pending_window_are_ignored() {
        let profiles = axis_profiles(2, 4);
        // Raw sequence A A A B A B with delay 2. The change at position 3
        // opens a window through position 5, so the flip back to A at 4
        // produces no event and the decision at 5 reads B.
        let raw = [0usize, 0, 0, 1, 0, 1];
        let mut stepper = SidStepper::new(&profiles, 2, FinalizeRule::RawAtFinalization).unwrap();
        for &r in &raw {
            stepper.step(&axis(r, 4));
        }
        let (segments, changes) = stepper.finish();
        assert_eq!(changes, vec![3]);
        assert_eq!(
            segments,
            vec![
                LabeledSegment { start: 0, end: 2, label: 0, resolution: Resolution::AtToken(2) },
                LabeledSegment { start: 3, end: 5, label: 1, resolution: Resolution::AtToken(5) },
            ]
        );
    }

    #[test]
    fn stream_start_opens_a_window_that_resolves_after_the_delay() {
        let profiles = axis_profiles(2, 4);
        let mut stepper = SidStepper::new(&profiles, 2, FinalizeRule::RawAtFinalization).unwrap();
        for _ in 0..4 {
            stepper.step(&axis(1, 4));
        }
        let (segments, changes) = stepper.finish();
        assert!(changes.is_empty());
        assert_eq!(
            segments,
            vec![LabeledSegment { start: 0, end: 3, label: 1, resolution: Resolution::AtToken(2) }]
        );
    }

    #[test]
    fn a_stream_shorter_than_the_delay_resolves_at_flush() {
        let profiles = axis_profiles(2, 4);
        let mut stepper = SidStepper::new(&profiles, 5, FinalizeRule::RawAtFinalization).unwrap();
        stepper.step(&axis(0, 4));
        stepper.step(&axis(1, 4));
        let (segments, changes) = stepper.finish();
        // The start-of-stream window is still pending at position 1, so the
        // flip there is locked out and the whole stream resolves as one
        // segment labeled from the last token.
        assert!(changes.is_empty());
        assert_eq!(
            segments,
            vec![LabeledSegment { start: 0, end: 1, label: 1, resolution: Resolution::AtFlush }]
        );
    }

    #[test]
    fn majority_vote_can_overrule_the_final_raw_label() {
        let profiles = axis_profiles(2, 4);
        // Window raws are B B A, so the vote picks B while the final raw
        // says A.
        let raw = [0usize, 0, 0, 1, 1, 0];
        let run = |rule| {
            let mut stepper = SidStepper::new(&profiles, 2, rule).unwrap();
            for &r in &raw {
                stepper.step(&axis(r, 4));
            }
            stepper.finish().0
        };
        let majority = run(FinalizeRule::MajorityVote);
        assert_eq!(majority.last().unwrap().label, 1);
        let at_final = run(FinalizeRule::RawAtFinalization);
        assert_eq!(at_final.last().unwrap().label, 0);
    }

    #[test]
    fn empty_profile_set_is_rejected() {
        assert!(matches!(
            SidStepper::new(&[], 2, FinalizeRule::RawAtFinalization),
            Err(AttribError::NoProfiles)
        ));
    }

    #[test]
    fn missed_changes_grow_with_the_delay_and_vanish_below_the_gap() {
        let profiles = axis_profiles(3, 4);
        // Speaker rotates every 3 tokens, so ground-truth changes sit at
        // 3, 6, 9, 12, 15.
        let raw: Vec<usize> = (0..18).map(|p| (p / 3) % 3).collect();
        let truth: Vec<usize> = vec![3, 6, 9, 12, 15];
        let mut missed_by_delay = Vec::new();
        for delay in [0usize, 1, 2, 3, 4, 8] {
            let mut stepper =
                SidStepper::new(&profiles, delay, FinalizeRule::RawAtFinalization).unwrap();
            for &r in &raw {
                stepper.step(&axis(r, 4));
            }
            let (_, changes) = stepper.finish();
            let missed = truth.iter().filter(|t| !changes.contains(t)).count();
            missed_by_delay.push(missed);
            if delay < 3 {
                assert_eq!(missed, 0, "delay {delay} below the change gap missed {missed}");
            }
        }
        for pair in missed_by_delay.windows(2) {
            assert!(pair[0] <= pair[1], "misses decreased for a longer delay: {missed_by_delay:?}");
        }
        assert!(missed_by_delay.last().unwrap() > &missed_by_delay[2]);
    }

    #[test]
    fn constant_embeddings_form_one_segment_with_the_delayed_embedding() {
        let e: Vec<f64> = vec![0.3, -0.4, 0.5];
        let mut stepper = SdStepper::new(0.98, 2);
        let mut emissions = Vec::new();
        for p in 0..6 {
            if let Some(em) = stepper.step(&e) {
                emissions.push((p, em.segment_start));
            }
        }
        let (segments, flush, changes) = stepper.finish();
        assert_eq!(emissions, vec![(2, 0)]);
        assert!(flush.is_none());
        assert!(changes.is_empty());
        assert_eq!(segments.len(), 1);
        assert_eq!(segments[0].start, 0);
        assert_eq!(segments[0].end, 5);
        assert_eq!(segments[0].embedding_at, 2);
        assert_eq!(segments[0].embedding, e);
    }

    #[test]
    fn orthogonal_neighbors_trigger_at_every_unlocked_token() {
        // Embeddings cycle through orthogonal axes, so every adjacent cosine
        // is 0. With zero delay each token past the first is a change; with
        // delay 1 the lockout makes changes land on every other token.
        let embeddings: Vec<Vec<f64>> = (0..8).map(|p| axis(p % 4, 4)).collect();
        let mut zero = SdStepper::new(0.98, 0);
        let mut one = SdStepper::new(0.98, 1);
        for e in &embeddings {
            zero.step(e);
            one.step(e);
        }
        assert_eq!(zero.finish().2, vec![1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(one.finish().2, vec![2, 4, 6]);
    }

    #[test]
    fn threshold_extremes_always_or_never_detect() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let embeddings: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut never = SdStepper::new(-1.0, 0);
        let mut always = SdStepper::new(1.0 + 1e-9, 0);
        for e in &embeddings {
            never.step(e);
            always.step(e);
        }
        assert!(never.finish().2.is_empty());
        assert_eq!(always.finish().2, (1..10).collect::<Vec<_>>());
    }

    #[test]
    fn a_segment_cut_short_takes_its_last_embedding() {
        let embeddings = [axis(0, 3), axis(0, 3), axis(1, 3), axis(1, 3)];
        let mut stepper = SdStepper::new(0.98, 4);
        let mut emissions = Vec::new();
        for e in &embeddings {
            if let Some(em) = stepper.step(e) {
                emissions.push(em.segment_start);
            }
        }
        let (segments, flush, changes) = stepper.finish();
        // The start-of-stream window is still pending when the stream ends,
        // so the flip at 2 is locked out and the single segment takes the
        // last available embedding.
        assert!(emissions.is_empty());
        assert_eq!(flush, Some(SdEmission { segment_start: 0 }));
        assert!(changes.is_empty());
        assert_eq!(segments.len(), 1);
        assert_eq!(segments[0].embedding_at, 3);
        assert_eq!(segments[0].embedding, axis(1, 3));
        assert_eq!(segments[0].resolution, Resolution::AtFlush);
    }

    #[test]
    fn delayed_diarization_segments_carry_their_window_embeddings() {
        // Three blocks of six tokens on orthogonal axes with delay 2. Each
        // block's embedding is taken two tokens past its start.
        let embeddings: Vec<Vec<f64>> = (0..18).map(|p| axis(p / 6, 4)).collect();
        let mut stepper = SdStepper::new(0.98, 2);
        let mut emissions = Vec::new();
        for (p, e) in embeddings.iter().enumerate() {
            if let Some(em) = stepper.step(e) {
                emissions.push((p, em.segment_start));
            }
        }
        let (segments, flush, changes) = stepper.finish();
        assert_eq!(emissions, vec![(2, 0), (8, 6), (14, 12)]);
        assert!(flush.is_none());
        assert_eq!(changes, vec![6, 12]);
        let spans: Vec<(usize, usize, usize)> =
            segments.iter().map(|s| (s.start, s.end, s.embedding_at)).collect();
        assert_eq!(spans, vec![(0, 5, 2), (6, 11, 8), (12, 17, 14)]);
        for (i, seg) in segments.iter().enumerate() {
            assert_eq!(seg.embedding, axis(i, 4));
        }
    }
}
