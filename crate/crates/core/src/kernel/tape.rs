//! Reverse-mode gradients over a Wengert list.
//!
//! The tape records every intermediate matrix together with a closure that
//! routes an upstream gradient to the node's parents. Only the operations the
//! model stack actually needs are provided; this is not a general autodiff
//! library. Nodes are created in topological order, so a single reverse pass
//! over node ids accumulates all gradients.

use std::cell::RefCell;

use super::mask::MaskSpec;
use super::matrix::Matrix;

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

impl Var {
    /// Raw node id, for custom backward rules routing gradients by hand.
    pub(crate) fn id(self) -> usize {
        self.id
    }
}

type BackFn = Box<dyn Fn(&Matrix, &mut dyn FnMut(usize, Matrix))>;

struct Node {
    value: Matrix,
    back: Option<BackFn>,
}

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of one scalar with respect to every node, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of a node, treating "never touched" as all zeros.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Matrix::zeros(shape.0, shape.1),
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, back: Option<BackFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, back });
        Var { id: nodes.len() - 1 }
    }

    /// Records a node with a caller-supplied backward rule. Used by layers
    /// whose gradient is cheaper to state analytically than to compose.
    pub(crate) fn push_custom(&self, value: Matrix, back: BackFn) -> Var {
        self.push(value, Some(back))
    }

    /// Inserts a constant or parameter. Leaves receive gradients but have no
    /// parents.
    pub fn leaf(&self, value: Matrix) -> Var {
        self.push(value, None)
    }

    pub fn value(&self, v: Var) -> Matrix {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.id].value.shape()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        let m = &nodes[v.id].value;
        assert_eq!(m.shape(), (1, 1), "scalar_value on non-scalar node");
        m[(0, 0)]
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.add(&vb);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.id, g.clone());
                sink(b.id, g.clone());
            })),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.sub(&vb);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.id, g.clone());
                sink(b.id, g.scaled(-1.0));
            })),
        )
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.zip_with(&vb, |x, y| x * y);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.id, g.zip_with(&vb, |gx, y| gx * y));
                sink(b.id, g.zip_with(&va, |gx, x| gx * x));
            })),
        )
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let out = self.value(a).scaled(c);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.id, g.scaled(c));
            })),
        )
    }

    /// Adds a 1-by-C row vector to every row of an R-by-C matrix.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        let va = self.value(a);
        let vrow = self.value(row);
        assert_eq!(vrow.rows(), 1, "add_row takes a row vector");
        assert_eq!(va.cols(), vrow.cols(), "add_row width mismatch");
        let out = Matrix::from_fn(va.rows(), va.cols(), |r, c| va[(r, c)] + vrow[(0, c)]);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.id, g.clone());
                let mut row_grad = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        row_grad[(0, c)] += g[(r, c)];
                    }
                }
                sink(row.id, row_grad);
            })),
        )
    }

    /// Divides every entry by a 1-by-1 scalar node.
    pub fn div_by_scalar(&self, a: Var, s: Var) -> Var {
        let va = self.value(a);
        let vs = self.value(s);
        assert_eq!(vs.shape(), (1, 1), "div_by_scalar takes a scalar divisor");
        let d = vs[(0, 0)];
        let out = va.scaled(1.0 / d);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.id, g.scaled(1.0 / d));
                let mut acc = 0.0;
                for (gx, x) in g.data().iter().zip(va.data()) {
                    acc += gx * x;
                }
                sink(s.id, Matrix::from_vec(1, 1, vec![-acc / (d * d)]));
            })),
        )
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.matmul(&vb);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.id, g.matmul(&vb.transpose()));
                sink(b.id, va.transpose().matmul(g));
            })),
        )
    }

    pub fn transpose(&self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.id, g.transpose());
            })),
        )
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let saved = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.id, g.zip_with(&saved, |gx, y| gx * (1.0 - y * y)));
            })),
        )
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let saved = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.id, g.zip_with(&saved, |gx, y| gx * y * (1.0 - y)));
            })),
        )
    }

    /// Elementwise square root. Inputs must be strictly positive.
    pub fn sqrt(&self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        let saved = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.id, g.zip_with(&saved, |gx, y| gx * 0.5 / y));
            })),
        )
    }

    /// Sum of all entries, as a 1-by-1 node.
    pub fn sum(&self, a: Var) -> Var {
        let va = self.value(a);
        let shape = va.shape();
        let out = Matrix::from_vec(1, 1, vec![va.sum()]);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.id, Matrix::filled(shape.0, shape.1, g[(0, 0)]));
            })),
        )
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Var {
        let va = self.value(a);
        assert!(start + len <= va.rows(), "slice_rows out of range");
        let (rows, cols) = va.shape();
        let out = Matrix::from_fn(len, cols, |r, c| va[(start + r, c)]);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut padded = Matrix::zeros(rows, cols);
                for r in 0..len {
                    for c in 0..cols {
                        padded[(start + r, c)] = g[(r, c)];
                    }
                }
                sink(a.id, padded);
            })),
        )
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        let va = self.value(a);
        assert!(start + len <= va.cols(), "slice_cols out of range");
        let (rows, cols) = va.shape();
        let out = Matrix::from_fn(rows, len, |r, c| va[(r, start + c)]);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut padded = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    for c in 0..len {
                        padded[(r, start + c)] = g[(r, c)];
                    }
                }
                sink(a.id, padded);
            })),
        )
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows needs at least one part");
        let values: Vec<Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let cols = values[0].cols();
        let total: usize = values.iter().map(Matrix::rows).sum();
        let mut data = Vec::with_capacity(total * cols);
        for v in &values {
            assert_eq!(v.cols(), cols, "concat_rows width mismatch");
            data.extend_from_slice(v.data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let row_counts: Vec<usize> = values.iter().map(Matrix::rows).collect();
        self.push(
            Matrix::from_vec(total, cols, data),
            Some(Box::new(move |g, sink| {
                let mut offset = 0;
                for (&id, &rows) in ids.iter().zip(&row_counts) {
                    let part = Matrix::from_fn(rows, g.cols(), |r, c| g[(offset + r, c)]);
                    sink(id, part);
                    offset += rows;
                }
            })),
        )
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let values: Vec<Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let rows = values[0].rows();
        let total: usize = values.iter().map(Matrix::cols).sum();
        let mut out = Matrix::zeros(rows, total);
        let mut offset = 0;
        for v in &values {
            assert_eq!(v.rows(), rows, "concat_cols height mismatch");
            for r in 0..rows {
                for c in 0..v.cols() {
                    out[(r, offset + c)] = v[(r, c)];
                }
            }
            offset += v.cols();
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let col_counts: Vec<usize> = values.iter().map(Matrix::cols).collect();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut offset = 0;
                for (&id, &cols) in ids.iter().zip(&col_counts) {
                    let part = Matrix::from_fn(g.rows(), cols, |r, c| g[(r, offset + c)]);
                    sink(id, part);
                    offset += cols;
                }
            })),
        )
    }

    /// Extracts one column as an R-by-1 node.
    pub fn gather_col(&self, a: Var, col: usize) -> Var {
        let va = self.value(a);
        assert!(col < va.cols(), "gather_col out of range");
        let (rows, cols) = va.shape();
        let out = Matrix::from_fn(rows, 1, |r, _| va[(r, col)]);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut padded = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    padded[(r, col)] = g[(r, 0)];
                }
                sink(a.id, padded);
            })),
        )
    }

    /// Row-wise softmax where row `t` is normalized over `mask.window(t, S)`
    /// only; entries outside the window are exactly zero in the output and
    /// receive exactly zero gradient.
    pub fn row_softmax_masked(&self, scores: Var, mask: &MaskSpec) -> Var {
        let vs = self.value(scores);
        let (rows, cols) = vs.shape();
        let mask = *mask;
        let mut out = Matrix::zeros(rows, cols);
        for t in 0..rows {
            let w = mask.window(t, cols);
            let mut m = f64::NEG_INFINITY;
            for s in w.clone() {
                m = m.max(vs[(t, s)]);
            }
            let mut z = 0.0;
            for s in w.clone() {
                let e = (vs[(t, s)] - m).exp();
                out[(t, s)] = e;
                z += e;
            }
            for s in w {
                out[(t, s)] /= z;
            }
        }
        let saved = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut dx = Matrix::zeros(rows, cols);
                for t in 0..rows {
                    let w = mask.window(t, cols);
                    let mut dot = 0.0;
                    for s in w.clone() {
                        dot += g[(t, s)] * saved[(t, s)];
                    }
                    for s in w {
                        dx[(t, s)] = saved[(t, s)] * (g[(t, s)] - dot);
                    }
                }
                sink(scores.id, dx);
            })),
        )
    }

    /// Row-wise log-softmax over full rows.
    pub fn row_log_softmax(&self, a: Var) -> Var {
        let va = self.value(a);
        let (rows, cols) = va.shape();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let m = va.row(r).iter().fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            let z: f64 = va.row(r).iter().map(|&x| (x - m).exp()).sum();
            let lse = m + z.ln();
            for c in 0..cols {
                out[(r, c)] = va[(r, c)] - lse;
            }
        }
        let probs = out.map(f64::exp);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut dx = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let gsum: f64 = g.row(r).iter().sum();
                    for c in 0..cols {
                        dx[(r, c)] = g[(r, c)] - probs[(r, c)] * gsum;
                    }
                }
                sink(a.id, dx);
            })),
        )
    }

    /// log(sum(exp(x))) over every entry, as a 1-by-1 node.
    pub fn log_sum_exp(&self, a: Var) -> Var {
        let va = self.value(a);
        let (rows, cols) = va.shape();
        let m = va.data().iter().fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
        let z: f64 = va.data().iter().map(|&x| (x - m).exp()).sum();
        let lse = m + z.ln();
        let weights = va.map(|x| (x - lse).exp());
        self.push(
            Matrix::from_vec(1, 1, vec![lse]),
            Some(Box::new(move |g, sink| {
                let _ = (rows, cols);
                sink(a.id, weights.scaled(g[(0, 0)]));
            })),
        )
    }

    /// Looks up rows of an embedding table. Duplicate ids accumulate
    /// gradient into the same row.
    pub fn embed(&self, table: Var, ids: &[usize]) -> Var {
        let vt = self.value(table);
        let (vocab, dim) = vt.shape();
        for &id in ids {
            assert!(id < vocab, "embedding id {id} out of range {vocab}");
        }
        let out = Matrix::from_fn(ids.len(), dim, |r, c| vt[(ids[r], c)]);
        let ids = ids.to_vec();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut dt = Matrix::zeros(vocab, dim);
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..dim {
                        dt[(id, c)] += g[(r, c)];
                    }
                }
                sink(table.id, dt);
            })),
        )
    }

    /// Per-row layer normalization with learned gain and bias.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var) -> Var {
        const EPS: f64 = 1e-6;
        let vx = self.value(x);
        let vg = self.value(gamma);
        let vb = self.value(beta);
        let (rows, cols) = vx.shape();
        assert_eq!(vg.shape(), (1, cols), "layer_norm gain shape");
        assert_eq!(vb.shape(), (1, cols), "layer_norm bias shape");
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let mean: f64 = vx.row(r).iter().sum::<f64>() / cols as f64;
            let var: f64 =
                vx.row(r).iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[r] = is;
            for c in 0..cols {
                xhat[(r, c)] = (vx[(r, c)] - mean) * is;
            }
        }
        let out = Matrix::from_fn(rows, cols, |r, c| xhat[(r, c)] * vg[(0, c)] + vb[(0, c)]);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut dgamma = Matrix::zeros(1, cols);
                let mut dbeta = Matrix::zeros(1, cols);
                let mut dx = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let mut gh_mean = 0.0;
                    let mut ghx_mean = 0.0;
                    for c in 0..cols {
                        let gh = g[(r, c)] * vg[(0, c)];
                        gh_mean += gh;
                        ghx_mean += gh * xhat[(r, c)];
                        dgamma[(0, c)] += g[(r, c)] * xhat[(r, c)];
                        dbeta[(0, c)] += g[(r, c)];
                    }
                    gh_mean /= cols as f64;
                    ghx_mean /= cols as f64;
                    for c in 0..cols {
                        let gh = g[(r, c)] * vg[(0, c)];
                        dx[(r, c)] = inv_std[r] * (gh - gh_mean - xhat[(r, c)] * ghx_mean);
                    }
                }
                sink(x.id, dx);
                sink(gamma.id, dgamma);
                sink(beta.id, dbeta);
            })),
        )
    }

    /// Strided causal 1-d convolution over rows. Output row `tau` is computed
    /// from input rows `anchor - width + 1 ..= anchor` with
    /// `anchor = tau * stride + stride - 1`, so an output row never reads
    /// input past its own block. Out-of-range taps are zero. The weight
    /// matrix stacks the taps: `(width * in_dim)`-by-`out_dim`, tap 0 being
    /// the anchor (most recent) row.
    pub fn causal_conv1d(&self, x: Var, w: Var, b: Var, width: usize, stride: usize) -> Var {
        assert!(width > 0 && stride > 0, "conv width and stride must be positive");
        let vx = self.value(x);
        let vw = self.value(w);
        let vb = self.value(b);
        let (t_in, in_dim) = vx.shape();
        let out_dim = vw.cols();
        assert_eq!(vw.rows(), width * in_dim, "conv weight rows");
        assert_eq!(vb.shape(), (1, out_dim), "conv bias shape");
        let t_out = t_in.div_ceil(stride);
        let mut out = Matrix::zeros(t_out, out_dim);
        for tau in 0..t_out {
            let anchor = tau * stride + stride - 1;
            for o in 0..out_dim {
                out[(tau, o)] = vb[(0, o)];
            }
            for k in 0..width {
                let Some(src) = anchor.checked_sub(k) else { break };
                if src >= t_in {
                    continue;
                }
                for ci in 0..in_dim {
                    let xv = vx[(src, ci)];
                    if xv == 0.0 {
                        continue;
                    }
                    let wrow = k * in_dim + ci;
                    for o in 0..out_dim {
                        out[(tau, o)] += xv * vw[(wrow, o)];
                    }
                }
            }
        }
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut dx = Matrix::zeros(t_in, in_dim);
                let mut dw = Matrix::zeros(width * in_dim, out_dim);
                let mut db = Matrix::zeros(1, out_dim);
                for tau in 0..t_out {
                    let anchor = tau * stride + stride - 1;
                    for o in 0..out_dim {
                        db[(0, o)] += g[(tau, o)];
                    }
                    for k in 0..width {
                        let Some(src) = anchor.checked_sub(k) else { break };
                        if src >= t_in {
                            continue;
                        }
                        for ci in 0..in_dim {
                            let wrow = k * in_dim + ci;
                            for o in 0..out_dim {
                                let gv = g[(tau, o)];
                                dx[(src, ci)] += gv * vw[(wrow, o)];
                                dw[(wrow, o)] += gv * vx[(src, ci)];
                            }
                        }
                    }
                }
                sink(x.id, dx);
                sink(w.id, dw);
                sink(b.id, db);
            })),
        )
    }

    /// Backpropagates from a 1-by-1 loss node. Panics when the node is not
    /// scalar.
    pub fn backward(&self, loss: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.shape(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Matrix::filled(1, 1, 1.0));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].clone() else { continue };
            if let Some(back) = &nodes[id].back {
                back(&g, &mut |pid, contribution| match &mut grads[pid] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                });
            }
        }
        Gradients { grads }
    }
}
