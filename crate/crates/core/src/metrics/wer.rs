//! Word error rate via Levenshtein alignment with deterministic backtrace.

/// One aligned pair: reference index, hypothesis index. `(Some, Some)` is a
/// hit or substitution, `(Some, None)` a deletion, `(None, Some)` an
/// insertion.
pub type AlignedPair = (Option<usize>, Option<usize>);

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub hits: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
    pub hyp_len: usize,
    pub pairs: Vec<AlignedPair>,
}

impl AlignmentResult {
    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// Errors over reference length. An empty reference scores all
    /// hypothesis tokens as insertions against a denominator of one.
    pub fn wer(&self) -> f64 {
        self.edits() as f64 / self.ref_len.max(1) as f64
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Op {
    Hit,
    Sub,
    Del,
    Ins,
    Start,
}

/// Aligns hypothesis to reference with unit edit costs. When several
/// alignments tie on cost the backtrace prefers hit, then substitution, then
/// deletion, then insertion, making the result deterministic.
pub fn align<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hypothesis: &[T]) -> AlignmentResult {
    let r = reference.len();
    let h = hypothesis.len();
    let mut cost = vec![vec![0usize; h + 1]; r + 1];
    let mut op = vec![vec![Op::Start; h + 1]; r + 1];
    for i in 1..=r {
        cost[i][0] = i;
        op[i][0] = Op::Del;
    }
    for j in 1..=h {
        cost[0][j] = j;
        op[0][j] = Op::Ins;
    }
    for i in 1..=r {
        for j in 1..=h {
            let matches = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            let diag = cost[i - 1][j - 1] + usize::from(!matches);
            let del = cost[i - 1][j] + 1;
            let ins = cost[i][j - 1] + 1;
            // candidates listed in preference order for equal cost
            let mut best = (diag, if matches { Op::Hit } else { Op::Sub });
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
    let mut pairs = Vec::with_capacity(r.max(h));
    let (mut hits, mut subs, mut dels, mut inss) = (0, 0, 0, 0);
    let (mut i, mut j) = (r, h);
    while i > 0 || j > 0 {
        match op[i][j] {
            Op::Hit => {
                hits += 1;
                pairs.push((Some(i - 1), Some(j - 1)));
                i -= 1;
                j -= 1;
            }
            Op::Sub => {
                subs += 1;
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
    AlignmentResult {
        hits,
        substitutions: subs,
        deletions: dels,
        insertions: inss,
        ref_len: r,
        hyp_len: h,
        pairs,
    }
}

/// Word error rate of `hypothesis` against `reference`.
pub fn wer<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hypothesis: &[T]) -> f64 {
    align(reference, hypothesis).wer()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn identical_sequences_have_zero_wer() {
        let r = toks("the quick brown fox");
        let a = align(&r, &r);
        assert_eq!(a.edits(), 0);
        assert_eq!(a.hits, 4);
        assert_eq!(a.wer(), 0.0);
    }

    #[test]
    fn single_substitution() {
        let a = align(&toks("a b c"), &toks("a x c"));
        assert_eq!((a.hits, a.substitutions, a.deletions, a.insertions), (2, 1, 0, 0));
        assert!((a.wer() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_reference_counts_insertions_over_unit_denominator() {
        let a = align(&Vec::<String>::new(), &toks("x y z"));
        assert_eq!(a.insertions, 3);
        assert_eq!(a.wer(), 3.0);
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        let a = align(&toks("x y"), &Vec::<String>::new());
        assert_eq!(a.deletions, 2);
        assert_eq!(a.wer(), 1.0);
    }

    #[test]
    fn edit_distance_is_symmetric() {
        let pairs = [
            ("a b c d", "a c d"),
            ("x", "y z"),
            ("a a b b", "b b a a"),
            ("", "q"),
        ];
        for (left, right) in pairs {
            let lr = align(&toks(left), &toks(right)).edits();
            let rl = align(&toks(right), &toks(left)).edits();
            assert_eq!(lr, rl, "{left:?} vs {right:?}");
        }
    }

    #[test]
    fn backtrace_prefers_hits_on_ties() {
        // "a b" -> "b": deleting "a" keeps the hit on "b"; substituting then
        // deleting would cost the same edits but lose the hit
        let a = align(&toks("a b"), &toks("b"));
        assert_eq!(a.hits, 1);
        assert_eq!(a.deletions, 1);
        assert_eq!(a.substitutions, 0);
        assert_eq!(a.pairs, vec![(Some(0), None), (Some(1), Some(0))]);
    }

    #[test]
    fn pairs_cover_both_sequences_monotonically() {
        let r = toks("a b c d e");
        let h = toks("a c x e f");
        let a = align(&r, &h);
        let mut next_ref = 0;
        let mut next_hyp = 0;
        for (ri, hi) in &a.pairs {
            if let Some(ri) = ri {
                assert_eq!(*ri, next_ref);
                next_ref += 1;
            }
            if let Some(hi) = hi {
                assert_eq!(*hi, next_hyp);
                next_hyp += 1;
            }
        }
        assert_eq!(next_ref, r.len());
        assert_eq!(next_hyp, h.len());
    }

    // plain min-of-three recursion on suffixes, as an independent check on
    // the table-based aligner
    fn recursive_edits(r: &[String], h: &[String]) -> usize {
        if r.is_empty() {
            return h.len();
        }
        if h.is_empty() {
            return r.len();
        }
        let diag = recursive_edits(&r[1..], &h[1..]) + usize::from(r[0] != h[0]);
        let del = recursive_edits(&r[1..], h) + 1;
        let ins = recursive_edits(r, &h[1..]) + 1;
        diag.min(del).min(ins)
    }

    #[test]
    fn matches_recursive_oracle_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(90);
        for trial in 0..120 {
            let r: Vec<String> = (0..rng.gen_range(0..=6))
                .map(|_| format!("w{}", rng.gen_range(0..4)))
                .collect();
            let h: Vec<String> = (0..rng.gen_range(0..=6))
                .map(|_| format!("w{}", rng.gen_range(0..4)))
                .collect();
            assert_eq!(align(&r, &h).edits(), recursive_edits(&r, &h), "trial {trial}");
        }
    }
}
