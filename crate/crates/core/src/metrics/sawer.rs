//! Speaker-attributed word error rates.
//!
//! The alignment minimizes word edits first and speaker mismatches on hits
//! second, so the speaker-attributed rates are well defined even when many
//! word alignments tie on cost.

use super::wer::{AlignedPair, AlignmentResult};

/// A recognized or reference word together with its speaker label.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedToken {
    pub token: String,
    pub speaker: String,
}

impl AttributedToken {
    pub fn new(token: impl Into<String>, speaker: impl Into<String>) -> Self {
        AttributedToken { token: token.into(), speaker: speaker.into() }
    }
}

/// Word, speaker and joint error rates of one attributed transcript pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SaRates {
    /// Word errors over reference length.
    pub wer: f64,
    /// Fraction of word hits whose speaker label mismatches.
    pub ser: f64,
    /// Word errors plus speaker mismatches over reference length; a word
    /// counts as correct only when token and speaker both match.
    pub sawer: f64,
    pub speaker_errors: usize,
    pub alignment: AlignmentResult,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Op {
    Diag,
    Del,
    Ins,
    Start,
}

/// Computes WER, SER and SAWER for a pair of attributed token sequences.
pub fn sawer(reference: &[AttributedToken], hypothesis: &[AttributedToken]) -> SaRates {
    let r = reference.len();
    let h = hypothesis.len();
    const INF: (usize, usize) = (usize::MAX / 2, usize::MAX / 2);
    // cost is (word edits, speaker mismatches on hits), compared
    // lexicographically
    let mut cost = vec![vec![INF; h + 1]; r + 1];
    let mut op = vec![vec![Op::Start; h + 1]; r + 1];
    cost[0][0] = (0, 0);
    for i in 1..=r {
        cost[i][0] = (i, 0);
        op[i][0] = Op::Del;
    }
    for j in 1..=h {
        cost[0][j] = (j, 0);
        op[0][j] = Op::Ins;
    }
    for i in 1..=r {
        for j in 1..=h {
            let word_match = reference[i - 1].token == hypothesis[j - 1].token;
            let spk_miss = usize::from(reference[i - 1].speaker != hypothesis[j - 1].speaker);
            let prev = cost[i - 1][j - 1];
            let diag = if word_match {
                (prev.0, prev.1 + spk_miss)
            } else {
                (prev.0 + 1, prev.1)
            };
            let del = (cost[i - 1][j].0 + 1, cost[i - 1][j].1);
            let ins = (cost[i][j - 1].0 + 1, cost[i][j - 1].1);
            let mut best = (diag, Op::Diag);
            if del < best.0 {
                best = (del, Op::Del);
            }
            if ins < best.0 {
                best = (ins, Op::Ins);
            }
            cost[i][j] = best.0;
            op[i][j] = best.1;
        }
    }
    let mut pairs: Vec<AlignedPair> = Vec::with_capacity(r.max(h));
    let (mut hits, mut subs, mut dels, mut inss, mut spk_errors) = (0, 0, 0, 0, 0);
    let (mut i, mut j) = (r, h);
    while i > 0 || j > 0 {
        match op[i][j] {
            Op::Diag => {
                if reference[i - 1].token == hypothesis[j - 1].token {
                    hits += 1;
                    if reference[i - 1].speaker != hypothesis[j - 1].speaker {
                        spk_errors += 1;
                    }
                } else {
                    subs += 1;
                }
                pairs.push((Some(i - 1), Some(j - 1)));
                i -= 1;
                j -= 1;
            }
            Op::Del => {
                dels += 1;
                pairs.push((Some(i - 1), None));
                i -= 1;
            }
            Op::Ins => {
                inss += 1;
                pairs.push((None, Some(j - 1)));
                j -= 1;
            }
            Op::Start => unreachable!("backtrace escaped the table"),
        }
    }
    pairs.reverse();
    let alignment = AlignmentResult {
        hits,
        substitutions: subs,
        deletions: dels,
        insertions: inss,
        ref_len: r,
        hyp_len: h,
        pairs,
    };
    let denom = r.max(1) as f64;
    SaRates {
        wer: alignment.edits() as f64 / denom,
        ser: if hits > 0 { spk_errors as f64 / hits as f64 } else { 0.0 },
        sawer: (alignment.edits() + spk_errors) as f64 / denom,
        speaker_errors: spk_errors,
        alignment,
    }
}
