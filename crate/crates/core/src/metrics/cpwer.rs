//! Concatenated minimum-permutation word error rate.
//!
//! Each speaker's tokens are concatenated in time order, then reference and
//! hypothesis speakers are paired so that the summed edit distance is
//! minimal. Unbalanced speaker counts are handled by padding the short side
//! with empty transcripts.

use super::assignment::min_cost_assignment;
use super::wer::align;

/// Largest speaker count handled by exhaustive permutation search; above
/// this the assignment solver takes over.
const EXACT_SEARCH_LIMIT: usize = 8;

/// All tokens attributed to one speaker, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerTranscript {
    pub speaker: String,
    pub tokens: Vec<String>,
}

impl SpeakerTranscript {
    pub fn new(speaker: impl Into<String>, tokens: &[&str]) -> Self {
        SpeakerTranscript {
            speaker: speaker.into(),
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
        }
    }
}

/// Outcome of a cpWER evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CpWerResult {
    pub rate: f64,
    pub edits: usize,
    pub ref_words: usize,
    /// Chosen pairing as (reference speaker, hypothesis speaker); `None`
    /// marks the padded empty transcript on the shorter side.
    pub pairing: Vec<(Option<String>, Option<String>)>,
    /// True when the pairing came from the assignment solver rather than
    /// exhaustive permutation search.
    pub approximate: bool,
}

/// Scores a hypothesis against a reference under the best speaker pairing.
///
/// Repeated speaker entries on either side are concatenated in order of
/// appearance before scoring. The rate divides total edits by the total
/// reference word count (floor 1).
pub fn cpwer(reference: &[SpeakerTranscript], hypothesis: &[SpeakerTranscript]) -> CpWerResult {
    cpwer_with_limit(reference, hypothesis, EXACT_SEARCH_LIMIT)
}

fn cpwer_with_limit(
    reference: &[SpeakerTranscript],
    hypothesis: &[SpeakerTranscript],
    exact_limit: usize,
) -> CpWerResult {
    let refs = group_by_speaker(reference);
    let hyps = group_by_speaker(hypothesis);
    let ref_words: usize = refs.iter().map(|(_, t)| t.len()).sum();
    let n = refs.len().max(hyps.len());
    if n == 0 {
        return CpWerResult {
            rate: 0.0,
            edits: 0,
            ref_words: 0,
            pairing: Vec::new(),
            approximate: false,
        };
    }
    let empty: Vec<String> = Vec::new();
    let cost: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let r = refs.get(i).map(|(_, t)| t).unwrap_or(&empty);
            (0..n)
                .map(|j| {
                    let h = hyps.get(j).map(|(_, t)| t).unwrap_or(&empty);
                    align(r, h).edits()
                })
                .collect()
        })
        .collect();
    let (perm, edits, approximate) = if n <= exact_limit {
        let (perm, total) = exact_search(&cost);
        (perm, total, false)
    } else {
        let as_i64: Vec<Vec<i64>> = cost
            .iter()
            .map(|row| row.iter().map(|&c| c as i64).collect())
            .collect();
        let (perm, total) = min_cost_assignment(&as_i64);
        (perm, total as usize, true)
    };
    let pairing = (0..n)
        .map(|i| {
            (
                refs.get(i).map(|(s, _)| s.clone()),
                hyps.get(perm[i]).map(|(s, _)| s.clone()),
            )
        })
        .collect();
    CpWerResult {
        rate: edits as f64 / ref_words.max(1) as f64,
        edits,
        ref_words,
        pairing,
        approximate,
    }
}

fn group_by_speaker(transcripts: &[SpeakerTranscript]) -> Vec<(String, Vec<String>)> {
    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    for t in transcripts {
        match groups.iter_mut().find(|(s, _)| *s == t.speaker) {
            Some((_, tokens)) => tokens.extend(t.tokens.iter().cloned()),
            None => groups.push((t.speaker.clone(), t.tokens.clone())),
        }
    }
    groups
}

fn exact_search(cost: &[Vec<usize>]) -> (Vec<usize>, usize) {
    let n = cost.len();
    let mut cols: Vec<usize> = (0..n).collect();
    let mut best_perm = cols.clone();
    let mut best = usize::MAX;
    descend(&mut cols, 0, 0, cost, &mut best, &mut best_perm);
    (best_perm, best)
}

fn descend(
    cols: &mut Vec<usize>,
    depth: usize,
    partial: usize,
    cost: &[Vec<usize>],
    best: &mut usize,
    best_perm: &mut Vec<usize>,
) {
    if partial >= *best {
        return;
    }
    if depth == cols.len() {
        *best = partial;
        best_perm.clone_from(cols);
        return;
    }
    for i in depth..cols.len() {
        cols.swap(depth, i);
        let next = partial + cost[depth][cols[depth]];
        descend(cols, depth + 1, next, cost, best, best_perm);
        cols.swap(depth, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn edit_distance(a: &[String], b: &[String]) -> usize {
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for i in 1..=a.len() {
            let mut cur = vec![i; b.len() + 1];
            for j in 1..=b.len() {
                let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
                cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
            }
            prev = cur;
        }
        prev[b.len()]
    }

    fn random_side(rng: &mut ChaCha12Rng, max_speakers: usize, tag: &str) -> Vec<SpeakerTranscript> {
        let k = rng.gen_range(1..=max_speakers);
        (0..k)
            .map(|s| {
                let len = rng.gen_range(0..=4);
                let tokens: Vec<String> =
                    (0..len).map(|_| format!("w{}", rng.gen_range(0..5))).collect();
                SpeakerTranscript {
                    speaker: format!("{tag}{s}"),
                    tokens,
                }
            })
            .collect()
    }

    fn oracle_edits(reference: &[SpeakerTranscript], hypothesis: &[SpeakerTranscript]) -> usize {
        let n = reference.len().max(hypothesis.len());
        let empty: Vec<String> = Vec::new();
        let mut cols: Vec<usize> = (0..n).collect();
        let mut best = usize::MAX;
        loop {
            let total: usize = (0..n)
                .map(|i| {
                    let r = reference.get(i).map(|t| &t.tokens).unwrap_or(&empty);
                    let h = hypothesis.get(cols[i]).map(|t| &t.tokens).unwrap_or(&empty);
                    edit_distance(r, h)
                })
                .sum();
            best = best.min(total);
            if !next_permutation(&mut cols) {
                break;
            }
        }
        best
    }

    fn next_permutation(p: &mut [usize]) -> bool {
        let n = p.len();
        if n < 2 {
            return false;
        }
        let mut i = n - 1;
        while i > 0 && p[i - 1] >= p[i] {
            i -= 1;
        }
        if i == 0 {
            return false;
        }
        let mut j = n - 1;
        while p[j] <= p[i - 1] {
            j -= 1;
        }
        p.swap(i - 1, j);
        p[i..].reverse();
        true
    }

    #[test]
    fn relabeled_speakers_score_zero() {
        let reference = vec![
            SpeakerTranscript::new("A", &["a", "b"]),
            SpeakerTranscript::new("B", &["c"]),
        ];
        let hypothesis = vec![
            SpeakerTranscript::new("X", &["c"]),
            SpeakerTranscript::new("Y", &["a", "b"]),
        ];
        let res = cpwer(&reference, &hypothesis);
        assert_eq!(res.rate, 0.0);
        assert_eq!(res.edits, 0);
        assert!(!res.approximate);
        assert_eq!(
            res.pairing,
            vec![
                (Some("A".into()), Some("Y".into())),
                (Some("B".into()), Some("X".into())),
            ]
        );
    }

    #[test]
    fn extra_hypothesis_speaker_pairs_with_padding() {
        let reference = vec![SpeakerTranscript::new("A", &["a", "b"])];
        let hypothesis = vec![
            SpeakerTranscript::new("X", &["a", "b"]),
            SpeakerTranscript::new("Y", &["z"]),
        ];
        let res = cpwer(&reference, &hypothesis);
        assert_eq!(res.edits, 1);
        assert_eq!(res.ref_words, 2);
        assert!((res.rate - 0.5).abs() < 1e-15);
        assert_eq!(res.pairing[1].0, None);
        assert_eq!(res.pairing[1].1, Some("Y".into()));
    }

    #[test]
    fn missing_hypothesis_speaker_counts_deletions() {
        let reference = vec![
            SpeakerTranscript::new("A", &["a", "b"]),
            SpeakerTranscript::new("B", &["c", "d", "e"]),
        ];
        let hypothesis = vec![SpeakerTranscript::new("X", &["a", "b"])];
        let res = cpwer(&reference, &hypothesis);
        assert_eq!(res.edits, 3);
        assert!((res.rate - 0.6).abs() < 1e-15);
    }

    #[test]
    fn empty_inputs() {
        let res = cpwer(&[], &[]);
        assert_eq!(res.rate, 0.0);
        assert!(res.pairing.is_empty());

        let hyp = vec![SpeakerTranscript::new("X", &["a", "b"])];
        let res = cpwer(&[], &hyp);
        assert_eq!(res.edits, 2);
        assert_eq!(res.ref_words, 0);
        assert_eq!(res.rate, 2.0);
    }

    #[test]
    fn repeated_speaker_entries_concatenate() {
        let reference = vec![
            SpeakerTranscript::new("A", &["a"]),
            SpeakerTranscript::new("A", &["b"]),
        ];
        let hypothesis = vec![SpeakerTranscript::new("X", &["a", "b"])];
        let res = cpwer(&reference, &hypothesis);
        assert_eq!(res.edits, 0);
        assert_eq!(res.ref_words, 2);
    }

    #[test]
    fn invariant_under_hypothesis_relabeling() {
        let mut rng = ChaCha12Rng::seed_from_u64(71);
        for _ in 0..50 {
            let reference = random_side(&mut rng, 4, "r");
            let hypothesis = random_side(&mut rng, 4, "h");
            let base = cpwer(&reference, &hypothesis);
            let relabeled: Vec<SpeakerTranscript> = hypothesis
                .iter()
                .map(|t| SpeakerTranscript {
                    speaker: format!("renamed-{}", t.speaker),
                    tokens: t.tokens.clone(),
                })
                .collect();
            assert_eq!(base.edits, cpwer(&reference, &relabeled).edits);
        }
    }

    #[test]
    fn never_worse_than_identity_pairing() {
        let mut rng = ChaCha12Rng::seed_from_u64(72);
        for _ in 0..50 {
            let reference = random_side(&mut rng, 4, "r");
            let hypothesis = random_side(&mut rng, 4, "h");
            let res = cpwer(&reference, &hypothesis);
            let n = reference.len().max(hypothesis.len());
            let empty: Vec<String> = Vec::new();
            let identity: usize = (0..n)
                .map(|i| {
                    let r = reference.get(i).map(|t| &t.tokens).unwrap_or(&empty);
                    let h = hypothesis.get(i).map(|t| &t.tokens).unwrap_or(&empty);
                    edit_distance(r, h)
                })
                .sum();
            assert!(res.edits <= identity);
        }
    }

    #[test]
    fn exact_search_matches_factorial_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(73);
        for trial in 0..60 {
            let reference = random_side(&mut rng, 4, "r");
            let hypothesis = random_side(&mut rng, 4, "h");
            let res = cpwer(&reference, &hypothesis);
            assert_eq!(res.edits, oracle_edits(&reference, &hypothesis), "trial {trial}");
        }
    }

    #[test]
    fn assignment_path_matches_exact_and_is_flagged() {
        let mut rng = ChaCha12Rng::seed_from_u64(74);
        for _ in 0..40 {
            let reference = random_side(&mut rng, 5, "r");
            let hypothesis = random_side(&mut rng, 5, "h");
            let exact = cpwer_with_limit(&reference, &hypothesis, EXACT_SEARCH_LIMIT);
            let solver = cpwer_with_limit(&reference, &hypothesis, 0);
            assert!(!exact.approximate);
            assert!(solver.approximate);
            assert_eq!(exact.edits, solver.edits);
        }
    }
}
