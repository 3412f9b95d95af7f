//! Alignment-lattice objective: marginal log-probability over all monotonic
//! blank-augmented alignments, plus Viterbi forced alignment.
//!
//! The lattice DP gets a hand-written backward rule. Composing it from tape
//! primitives would cost a node per lattice cell; the posterior form of the
//! gradient is two table sweeps.

use std::collections::BTreeMap;

use super::model::{AsrModel, Lattice};
use super::AsrError;
use crate::kernel::{MaskSpec, Matrix, Tape, Var};

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

fn alpha_table(blank: &Matrix, label: Option<&Matrix>) -> Vec<Vec<f64>> {
    let (t_len, u_plus) = blank.shape();
    let u_len = u_plus - 1;
    let mut alpha = vec![vec![f64::NEG_INFINITY; u_plus]; t_len];
    alpha[0][0] = 0.0;
    for t in 1..t_len {
        alpha[t][0] = alpha[t - 1][0] + blank[(t - 1, 0)];
    }
    if let Some(label) = label {
        for u in 1..=u_len {
            alpha[0][u] = alpha[0][u - 1] + label[(0, u - 1)];
        }
        for t in 1..t_len {
            for u in 1..=u_len {
                alpha[t][u] = logaddexp(
                    alpha[t - 1][u] + blank[(t - 1, u)],
                    alpha[t][u - 1] + label[(t, u - 1)],
                );
            }
        }
    }
    alpha
}

fn beta_table(blank: &Matrix, label: Option<&Matrix>) -> Vec<Vec<f64>> {
    let (t_len, u_plus) = blank.shape();
    let u_len = u_plus - 1;
    // beta[t][u] includes the emission taken at (t, u)
    let mut beta = vec![vec![f64::NEG_INFINITY; u_plus]; t_len];
    beta[t_len - 1][u_len] = blank[(t_len - 1, u_len)];
    for t in (0..t_len - 1).rev() {
        beta[t][u_len] = blank[(t, u_len)] + beta[t + 1][u_len];
    }
    if let Some(label) = label {
        for u in (0..u_len).rev() {
            beta[t_len - 1][u] = label[(t_len - 1, u)] + beta[t_len - 1][u + 1];
            for t in (0..t_len - 1).rev() {
                beta[t][u] = logaddexp(
                    blank[(t, u)] + beta[t + 1][u],
                    label[(t, u)] + beta[t][u + 1],
                );
            }
        }
    }
    beta
}

/// Total alignment log-probability computed two ways: by the forward
/// recursion and by the backward recursion. The two must agree up to
/// roundoff; returning both lets callers assert it.
pub fn lattice_log_prob(blank: &Matrix, label: Option<&Matrix>) -> (f64, f64) {
    let (t_len, u_plus) = blank.shape();
    let u_len = u_plus - 1;
    assert!(t_len > 0, "lattice needs at least one frame");
    if let Some(label) = label {
        assert_eq!(label.shape(), (t_len, u_len), "label table shape");
    } else {
        assert_eq!(u_len, 0, "missing label table for non-empty target");
    }
    let alpha = alpha_table(blank, label);
    let beta = beta_table(blank, label);
    (alpha[t_len - 1][u_len] + blank[(t_len - 1, u_len)], beta[0][0])
}

/// Negative total log-probability as a tape node. The backward rule routes
/// gradients to every lattice cell through its occupation posterior.
pub(crate) fn transducer_nll(tape: &Tape, blank: Var, label: Option<Var>) -> Var {
    let b = tape.value(blank);
    let l = label.map(|v| tape.value(v));
    let (t_len, u_plus) = b.shape();
    let u_len = u_plus - 1;
    let alpha = alpha_table(&b, l.as_ref());
    let beta = beta_table(&b, l.as_ref());
    let lnp = alpha[t_len - 1][u_len] + b[(t_len - 1, u_len)];
    let blank_id = blank.id();
    let label_id = label.map(|v| v.id());
    tape.push_custom(
        Matrix::from_vec(1, 1, vec![-lnp]),
        Box::new(move |g, sink| {
            let scale = -g[(0, 0)];
            let mut d_blank = Matrix::zeros(t_len, u_plus);
            for t in 0..t_len {
                for u in 0..=u_len {
                    let continuation = if t + 1 < t_len {
                        beta[t + 1][u]
                    } else if u == u_len {
                        0.0
                    } else {
                        continue;
                    };
                    d_blank[(t, u)] =
                        scale * (alpha[t][u] + b[(t, u)] + continuation - lnp).exp();
                }
            }
            sink(blank_id, d_blank);
            if let (Some(id), Some(l)) = (label_id, &l) {
                let mut d_label = Matrix::zeros(t_len, u_len);
                for t in 0..t_len {
                    for u in 0..u_len {
                        d_label[(t, u)] =
                            scale * (alpha[t][u] + l[(t, u)] + beta[t][u + 1] - lnp).exp();
                    }
                }
                sink(id, d_label);
            }
        }),
    )
}

/// Transducer training objective for one utterance: encode, build the
/// lattice, and differentiate the marginal negative log-likelihood back to
/// every parameter.
pub fn transducer_loss(
    model: &AsrModel,
    features: &Matrix,
    targets: &[usize],
    mask: &MaskSpec,
) -> Result<(f64, BTreeMap<String, Matrix>), AsrError> {
    let tape = Tape::new();
    let bound = model.params.bind(&tape);
    let layers = model.encode(&tape, &bound, features, mask)?;
    let top = *layers.last().expect("encoder returns at least one layer");
    let frames = tape.shape(top).0;
    if targets.len() > frames {
        return Err(AsrError::TargetLongerThanFrames { target: targets.len(), frames });
    }
    let Lattice { blank, label } = model.build_lattice(&tape, &bound, top, targets)?;
    let loss = transducer_nll(&tape, blank, label);
    let grads = bound.grads(&tape, &tape.backward(loss));
    Ok((tape.scalar_value(loss), grads))
}

/// Best-path alignment over a lattice of log-probabilities. Returns the
/// emission frame of each target token. Ties prefer staying on the blank
/// (time) transition.
pub fn viterbi_from_lattice(blank: &Matrix, label: Option<&Matrix>) -> Vec<usize> {
    let (t_len, u_plus) = blank.shape();
    let u_len = u_plus - 1;
    if u_len == 0 {
        return Vec::new();
    }
    let label = label.expect("label table required for non-empty target");
    let mut dp = vec![vec![f64::NEG_INFINITY; u_plus]; t_len];
    let mut via_label = vec![vec![false; u_plus]; t_len];
    dp[0][0] = 0.0;
    for t in 1..t_len {
        dp[t][0] = dp[t - 1][0] + blank[(t - 1, 0)];
    }
    for u in 1..=u_len {
        dp[0][u] = dp[0][u - 1] + label[(0, u - 1)];
        via_label[0][u] = true;
    }
    for t in 1..t_len {
        for u in 1..=u_len {
            let stay = dp[t - 1][u] + blank[(t - 1, u)];
            let emit = dp[t][u - 1] + label[(t, u - 1)];
            if emit > stay {
                dp[t][u] = emit;
                via_label[t][u] = true;
            } else {
                dp[t][u] = stay;
            }
        }
    }
    let mut frames = vec![0; u_len];
    let (mut t, mut u) = (t_len - 1, u_len);
    while u > 0 {
        if via_label[t][u] {
            u -= 1;
            frames[u] = t;
        } else {
            t -= 1;
        }
    }
    frames
}

/// Forced alignment of a reference against the encoder output: emission
/// frame per reference token.
pub fn viterbi_align(
    model: &AsrModel,
    features: &Matrix,
    targets: &[usize],
    mask: &MaskSpec,
) -> Result<Vec<usize>, AsrError> {
    let tape = Tape::new();
    let bound = model.params.bind(&tape);
    let layers = model.encode(&tape, &bound, features, mask)?;
    let top = *layers.last().expect("encoder returns at least one layer");
    let frames = tape.shape(top).0;
    if targets.len() > frames {
        return Err(AsrError::TargetLongerThanFrames { target: targets.len(), frames });
    }
    let Lattice { blank, label } = model.build_lattice(&tape, &bound, top, targets)?;
    let blank = tape.value(blank);
    let label = label.map(|v| tape.value(v));
    Ok(viterbi_from_lattice(&blank, label.as_ref()))
}
