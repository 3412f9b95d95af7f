//! Composite layers built from tape primitives.

use super::mask::MaskSpec;
use super::tape::{Tape, Var};
use super::KernelError;

/// Multi-head scaled dot-product attention over already-projected inputs.
///
/// `query`, `key` and `value` are frame sequences of equal width; the width
/// must divide evenly into `heads`. Key positions outside `mask.window(t)`
/// contribute exactly nothing to output frame `t`. The output has the shape
/// of the query.
pub fn mha(
    tape: &Tape,
    query: Var,
    key: Var,
    value: Var,
    heads: usize,
    mask: &MaskSpec,
) -> Result<Var, KernelError> {
    let (t_q, d) = tape.shape(query);
    let (t_k, d_k) = tape.shape(key);
    let (t_v, d_v) = tape.shape(value);
    if heads == 0 {
        return Err(KernelError::DimensionMismatch {
            op: "mha",
            detail: "heads must be positive".into(),
        });
    }
    if d != d_k || d != d_v {
        return Err(KernelError::DimensionMismatch {
            op: "mha",
            detail: format!("widths differ: query {d}, key {d_k}, value {d_v}"),
        });
    }
    if t_k != t_v {
        return Err(KernelError::DimensionMismatch {
            op: "mha",
            detail: format!("key has {t_k} rows, value has {t_v}"),
        });
    }
    if t_q == 0 || t_k == 0 {
        return Err(KernelError::EmptyInput("mha"));
    }
    if d % heads != 0 {
        return Err(KernelError::DimensionMismatch {
            op: "mha",
            detail: format!("width {d} not divisible by {heads} heads"),
        });
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = tape.slice_cols(query, h * dh, dh);
        let k = tape.slice_cols(key, h * dh, dh);
        let v = tape.slice_cols(value, h * dh, dh);
        let scores = tape.scale(tape.matmul(q, tape.transpose(k)), scale);
        let weights = tape.row_softmax_masked(scores, mask);
        head_outputs.push(tape.matmul(weights, v));
    }
    Ok(tape.concat_cols(&head_outputs))
}

/// Weights of one LSTM cell. Gate order along the 4H axis is
/// input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

/// Hidden and cell state, both 1-by-H.
pub type LstmState = (Var, Var);

pub fn lstm_zero_state(tape: &Tape, hidden: usize) -> LstmState {
    (
        tape.leaf(super::Matrix::zeros(1, hidden)),
        tape.leaf(super::Matrix::zeros(1, hidden)),
    )
}

/// One LSTM step. Returns the new hidden state (which is also the cell
/// output) together with the full recurrent state.
pub fn lstm_step(
    tape: &Tape,
    x: Var,
    state: LstmState,
    w: &LstmVars,
) -> Result<(Var, LstmState), KernelError> {
    let (xr, xc) = tape.shape(x);
    let (ir, gates4) = tape.shape(w.w_ih);
    let (hr, gates4_h) = tape.shape(w.w_hh);
    let (h, c) = state;
    let hidden = tape.shape(h).1;
    if xr != 1 || tape.shape(h).0 != 1 || tape.shape(c).0 != 1 {
        return Err(KernelError::DimensionMismatch {
            op: "lstm_step",
            detail: "input and state must be row vectors".into(),
        });
    }
    if xc != ir || gates4 != 4 * hidden || gates4_h != gates4 || hr != hidden
        || tape.shape(w.bias) != (1, gates4)
        || tape.shape(c).1 != hidden
    {
        return Err(KernelError::DimensionMismatch {
            op: "lstm_step",
            detail: format!(
                "input {xc}, hidden {hidden}, w_ih {ir}x{gates4}, w_hh {hr}x{gates4_h}"
            ),
        });
    }
    let gates = tape.add(
        tape.add(tape.matmul(x, w.w_ih), tape.matmul(h, w.w_hh)),
        w.bias,
    );
    let i = tape.sigmoid(tape.slice_cols(gates, 0, hidden));
    let f = tape.sigmoid(tape.slice_cols(gates, hidden, hidden));
    let g = tape.tanh(tape.slice_cols(gates, 2 * hidden, hidden));
    let o = tape.sigmoid(tape.slice_cols(gates, 3 * hidden, hidden));
    let c_new = tape.add(tape.mul(f, c), tape.mul(i, g));
    let h_new = tape.mul(o, tape.tanh(c_new));
    Ok((h_new, (h_new, c_new)))
}

/// L2 norm of a row vector as a 1-by-1 node, guarded away from zero.
pub fn row_norm(tape: &Tape, v: Var) -> Var {
    let sq = tape.sum(tape.mul(v, v));
    let eps = tape.leaf(super::Matrix::from_vec(1, 1, vec![1e-12]));
    tape.sqrt(tape.add(sq, eps))
}
