//! Time-synchronous beam search over the joint network.
//!
//! The search keeps one frontier of at most `beam_width` hypotheses,
//! mixing blank-terminated and still-expanding ones, so width 1 degenerates
//! to plain argmax decoding. Hypotheses with identical token sequences are
//! merged by adding probabilities; the merged entry keeps the alignment of
//! its strongest branch.

use std::collections::BTreeMap;

use super::model::AsrModel;
use super::vocab::BLANK_ID;
use super::AsrError;
use crate::kernel::{LstmState, MaskSpec, Matrix, Tape, Var};

/// When and how decoding stops before the input runs out. `frame_seconds`
/// is the audio duration covered by one encoder frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopPolicy {
    /// Stop at the first silent frame once this much audio is decoded.
    pub silence_after_seconds: Option<f64>,
    /// Unconditional stop once this much audio is decoded.
    pub hard_cap_seconds: Option<f64>,
    /// Mean squared feature amplitude below which a frame counts as silence.
    pub energy_threshold: f64,
    pub frame_seconds: f64,
}

impl StopPolicy {
    /// Decode every frame.
    pub fn none() -> StopPolicy {
        StopPolicy {
            silence_after_seconds: None,
            hard_cap_seconds: None,
            energy_threshold: 0.0,
            frame_seconds: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedToken {
    pub id: usize,
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeHypothesis {
    pub tokens: Vec<DecodedToken>,
    pub score: f64,
}

/// Worst-case look-ahead bought by the attention chunk, in seconds. An
/// unbounded mask waits for the whole utterance.
pub fn algorithmic_latency(mask: &MaskSpec, frame_hop_seconds: f64, subsample: usize) -> f64 {
    match mask.chunk_frames() {
        Some(chunk) => chunk as f64 * subsample as f64 * frame_hop_seconds,
        None => f64::INFINITY,
    }
}

/// Mean squared feature amplitude per encoder frame, pooling the input rows
/// each encoder frame is anchored to.
pub fn frame_energies(features: &Matrix, subsample: usize) -> Vec<f64> {
    let frames = features.rows().div_ceil(subsample);
    (0..frames)
        .map(|tau| {
            let lo = tau * subsample;
            let hi = ((tau + 1) * subsample).min(features.rows());
            let mut acc = 0.0;
            let mut n = 0usize;
            for r in lo..hi {
                for &v in features.row(r) {
                    acc += v * v;
                    n += 1;
                }
            }
            acc / n.max(1) as f64
        })
        .collect()
}

fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[derive(Clone)]
struct Branch {
    ids: Vec<usize>,
    frames: Vec<usize>,
    score: f64,
    state: usize,
}

#[derive(Clone)]
struct PendingExt {
    ids: Vec<usize>,
    frames: Vec<usize>,
    score: f64,
    parent_state: usize,
    tok: usize,
}

fn merge_done(map: &mut BTreeMap<Vec<usize>, Branch>, cand: Branch) {
    match map.entry(cand.ids.clone()) {
        std::collections::btree_map::Entry::Vacant(e) => {
            e.insert(cand);
        }
        std::collections::btree_map::Entry::Occupied(mut e) => {
            let cur = e.get_mut();
            if cand.score > cur.score {
                cur.frames = cand.frames;
                cur.state = cand.state;
            }
            cur.score = logaddexp(cur.score, cand.score);
        }
    }
}

fn merge_ext(map: &mut BTreeMap<Vec<usize>, PendingExt>, cand: PendingExt) {
    match map.entry(cand.ids.clone()) {
        std::collections::btree_map::Entry::Vacant(e) => {
            e.insert(cand);
        }
        std::collections::btree_map::Entry::Occupied(mut e) => {
            let cur = e.get_mut();
            if cand.score > cur.score {
                cur.frames = cand.frames;
                cur.parent_state = cand.parent_state;
                cur.tok = cand.tok;
            }
            cur.score = logaddexp(cur.score, cand.score);
        }
    }
}

/// Decodes one utterance. Emission frames index the subsampled encoder
/// frame sequence and are non-decreasing along the hypothesis.
pub fn beam_decode(
    model: &AsrModel,
    features: &Matrix,
    mask: &MaskSpec,
    beam_width: usize,
    max_symbols_per_frame: usize,
    stop: &StopPolicy,
) -> Result<DecodeHypothesis, AsrError> {
    assert!(beam_width >= 1, "beam width must be positive");
    let tape = Tape::new();
    let bound = model.params.bind(&tape);
    let layers = model.encode(&tape, &bound, features, mask)?;
    let top = *layers.last().expect("encoder returns at least one layer");
    let frames = tape.shape(top).0;
    let energies = frame_energies(features, model.config.subsample());
    let vocab = model.config.vocab_size;

    let mut states: Vec<(Var, LstmState)> = Vec::new();
    let (g0, s0) = model.prediction_step(&tape, &bound, BLANK_ID, None)?;
    states.push((g0, s0));
    let mut frontier = vec![Branch { ids: Vec::new(), frames: Vec::new(), score: 0.0, state: 0 }];

    for t in 0..frames {
        let fs = stop.frame_seconds;
        if let Some(cap) = stop.hard_cap_seconds {
            if (t + 1) as f64 * fs > cap + 1e-9 {
                break;
            }
        }
        if let Some(min_audio) = stop.silence_after_seconds {
            if t as f64 * fs >= min_audio - 1e-9 && energies[t] < stop.energy_threshold {
                break;
            }
        }
        let enc_row = tape.slice_rows(top, t, 1);
        let mut active = frontier;
        let mut done: BTreeMap<Vec<usize>, Branch> = BTreeMap::new();
        for step in 0..=max_symbols_per_frame {
            if active.is_empty() {
                break;
            }
            let mut ext: BTreeMap<Vec<usize>, PendingExt> = BTreeMap::new();
            for hyp in &active {
                let lp = tape.value(model.step_log_probs(&tape, &bound, enc_row, states[hyp.state].0));
                merge_done(
                    &mut done,
                    Branch {
                        ids: hyp.ids.clone(),
                        frames: hyp.frames.clone(),
                        score: hyp.score + lp[(0, BLANK_ID)],
                        state: hyp.state,
                    },
                );
                if step < max_symbols_per_frame {
                    for tok in 0..vocab {
                        if tok == BLANK_ID {
                            continue;
                        }
                        let mut ids = hyp.ids.clone();
                        ids.push(tok);
                        let mut fr = hyp.frames.clone();
                        fr.push(t);
                        merge_ext(
                            &mut ext,
                            PendingExt {
                                ids,
                                frames: fr,
                                score: hyp.score + lp[(0, tok)],
                                parent_state: hyp.state,
                                tok,
                            },
                        );
                    }
                }
            }
            // joint pruning across blank-terminated and expanding candidates
            let mut ranked: Vec<(f64, u8, Vec<usize>)> = done
                .values()
                .map(|b| (b.score, 0u8, b.ids.clone()))
                .chain(ext.values().map(|e| (e.score, 1u8, e.ids.clone())))
                .collect();
            ranked.sort_by(|a, b| {
                b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)).then_with(|| a.2.cmp(&b.2))
            });
            ranked.truncate(beam_width);
            let keep_done: Vec<&Vec<usize>> =
                ranked.iter().filter(|r| r.1 == 0).map(|r| &r.2).collect();
            let keep_ext: Vec<&Vec<usize>> =
                ranked.iter().filter(|r| r.1 == 1).map(|r| &r.2).collect();
            done.retain(|ids, _| keep_done.contains(&ids));
            active = keep_ext
                .into_iter()
                .map(|ids| {
                    let pending = ext.remove(ids).expect("kept key exists");
                    let (g, st) = model
                        .prediction_step(
                            &tape,
                            &bound,
                            pending.tok,
                            Some(states[pending.parent_state].1),
                        )
                        .expect("dimensions fixed by config");
                    states.push((g, st));
                    Branch {
                        ids: pending.ids,
                        frames: pending.frames,
                        score: pending.score,
                        state: states.len() - 1,
                    }
                })
                .collect();
        }
        frontier = done.into_values().collect();
    }

    let best = frontier
        .into_iter()
        .max_by(|a, b| a.score.total_cmp(&b.score).then_with(|| b.ids.cmp(&a.ids)))
        .expect("frontier never empties");
    Ok(DecodeHypothesis {
        tokens: best
            .ids
            .iter()
            .zip(&best.frames)
            .map(|(&id, &frame)| DecodedToken { id, frame })
            .collect(),
        score: best.score,
    })
}
