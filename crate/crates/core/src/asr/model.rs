//! Model definition: configuration, parameter initialization, and the
//! forward computations shared by training and decoding.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::vocab::BLANK_ID;
use super::AsrError;
use crate::kernel::{
    lstm_step, lstm_zero_state, mha, BoundParams, LstmState, LstmVars, MaskSpec, Matrix, ParamSet,
    Tape, Var,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrConfig {
    pub feat_dim: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub conv_width: usize,
    /// Strides of the two subsampling convolutions.
    pub conv_strides: (usize, usize),
    pub joint_dim: usize,
    pub vocab_size: usize,
    /// Capacity of the learned positional table, in encoder frames.
    pub max_frames: usize,
}

impl AsrConfig {
    /// Combined subsampling factor of the convolution stack.
    pub fn subsample(&self) -> usize {
        self.conv_strides.0 * self.conv_strides.1
    }

    /// Small configuration used by the synthetic experiments.
    pub fn toy(feat_dim: usize, vocab_size: usize) -> AsrConfig {
        AsrConfig {
            feat_dim,
            model_dim: 32,
            layers: 2,
            heads: 4,
            ff_dim: 64,
            conv_width: 3,
            conv_strides: (2, 2),
            joint_dim: 32,
            vocab_size,
            max_frames: 2048,
        }
    }
}

/// Per-step log-probability columns of the alignment lattice.
///
/// `blank` is frames-by-(targets+1); column u holds the blank log-prob after
/// consuming u targets. `label` is frames-by-targets with the log-prob of
/// emitting target u, absent when the target sequence is empty.
pub struct Lattice {
    pub blank: Var,
    pub label: Option<Var>,
}

pub struct AsrModel {
    pub config: AsrConfig,
    pub params: ParamSet,
}

fn dense(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::randn(rows, cols, 1.0 / (rows as f64).sqrt(), rng)
}

impl AsrModel {
    pub fn new(config: AsrConfig, seed: u64) -> AsrModel {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let c = &config;
        let mut p = ParamSet::new();
        p.insert("enc.conv0.w", dense(&mut rng, c.conv_width * c.feat_dim, c.model_dim));
        p.insert("enc.conv0.b", Matrix::zeros(1, c.model_dim));
        p.insert("enc.conv1.w", dense(&mut rng, c.conv_width * c.model_dim, c.model_dim));
        p.insert("enc.conv1.b", Matrix::zeros(1, c.model_dim));
        p.insert("enc.pos", Matrix::randn(c.max_frames, c.model_dim, 0.1, &mut rng));
        for l in 0..c.layers {
            let name = |n: &str| format!("enc.l{l}.{n}");
            p.insert(name("att_ln.g"), Matrix::filled(1, c.model_dim, 1.0));
            p.insert(name("att_ln.b"), Matrix::zeros(1, c.model_dim));
            p.insert(name("wq"), dense(&mut rng, c.model_dim, c.model_dim));
            p.insert(name("wk"), dense(&mut rng, c.model_dim, c.model_dim));
            p.insert(name("wv"), dense(&mut rng, c.model_dim, c.model_dim));
            p.insert(name("wo"), dense(&mut rng, c.model_dim, c.model_dim));
            p.insert(name("ff_ln.g"), Matrix::filled(1, c.model_dim, 1.0));
            p.insert(name("ff_ln.b"), Matrix::zeros(1, c.model_dim));
            p.insert(name("ff1.w"), dense(&mut rng, c.model_dim, c.ff_dim));
            p.insert(name("ff1.b"), Matrix::zeros(1, c.ff_dim));
            p.insert(name("ff2.w"), dense(&mut rng, c.ff_dim, c.model_dim));
            p.insert(name("ff2.b"), Matrix::zeros(1, c.model_dim));
        }
        p.insert("pred.embed", Matrix::randn(c.vocab_size, c.model_dim, 0.5, &mut rng));
        p.insert("pred.lstm.w_ih", dense(&mut rng, c.model_dim, 4 * c.model_dim));
        p.insert("pred.lstm.w_hh", dense(&mut rng, c.model_dim, 4 * c.model_dim));
        p.insert("pred.lstm.b", Matrix::zeros(1, 4 * c.model_dim));
        p.insert("joint.enc.w", dense(&mut rng, c.model_dim, c.joint_dim));
        p.insert("joint.pred.w", dense(&mut rng, c.model_dim, c.joint_dim));
        p.insert("joint.b", Matrix::zeros(1, c.joint_dim));
        p.insert("joint.out.w", dense(&mut rng, c.joint_dim, c.vocab_size));
        p.insert("joint.out.b", Matrix::zeros(1, c.vocab_size));
        AsrModel { config, params: p }
    }

    /// Runs the streaming encoder and returns every layer's activations,
    /// index 0 being the subsampled input representation. Lower layers feed
    /// the speaker encoder's cross-attention.
    pub fn encode(
        &self,
        tape: &Tape,
        bound: &BoundParams,
        features: &Matrix,
        mask: &MaskSpec,
    ) -> Result<Vec<Var>, AsrError> {
        if features.rows() == 0 {
            return Err(AsrError::EmptyInput);
        }
        let c = &self.config;
        let x = tape.leaf(features.clone());
        let h = tape.tanh(tape.causal_conv1d(
            x,
            bound.var("enc.conv0.w"),
            bound.var("enc.conv0.b"),
            c.conv_width,
            c.conv_strides.0,
        ));
        let h = tape.tanh(tape.causal_conv1d(
            h,
            bound.var("enc.conv1.w"),
            bound.var("enc.conv1.b"),
            c.conv_width,
            c.conv_strides.1,
        ));
        let frames = tape.shape(h).0;
        assert!(
            frames <= c.max_frames,
            "{frames} encoder frames exceed the positional table ({})",
            c.max_frames
        );
        let pos = tape.slice_rows(bound.var("enc.pos"), 0, frames);
        let mut z = tape.add(h, pos);
        let mut layers = Vec::with_capacity(c.layers + 1);
        layers.push(z);
        for l in 0..c.layers {
            let p = |n: &str| bound.var(&format!("enc.l{l}.{n}"));
            let normed = tape.layer_norm(z, p("att_ln.g"), p("att_ln.b"));
            let att = mha(
                tape,
                tape.matmul(normed, p("wq")),
                tape.matmul(normed, p("wk")),
                tape.matmul(normed, p("wv")),
                c.heads,
                mask,
            )?;
            z = tape.add(z, tape.matmul(att, p("wo")));
            let normed = tape.layer_norm(z, p("ff_ln.g"), p("ff_ln.b"));
            let hidden = tape.tanh(tape.add_row(tape.matmul(normed, p("ff1.w")), p("ff1.b")));
            let ff = tape.add_row(tape.matmul(hidden, p("ff2.w")), p("ff2.b"));
            z = tape.add(z, ff);
            layers.push(z);
        }
        Ok(layers)
    }

    /// Advances the prediction network by one token. `None` state starts a
    /// fresh history, seeded with the blank embedding.
    pub fn prediction_step(
        &self,
        tape: &Tape,
        bound: &BoundParams,
        token: usize,
        state: Option<LstmState>,
    ) -> Result<(Var, LstmState), AsrError> {
        let emb = tape.embed(bound.var("pred.embed"), &[token]);
        let weights = LstmVars {
            w_ih: bound.var("pred.lstm.w_ih"),
            w_hh: bound.var("pred.lstm.w_hh"),
            bias: bound.var("pred.lstm.b"),
        };
        let state = state.unwrap_or_else(|| lstm_zero_state(tape, self.config.model_dim));
        let (g, state) = lstm_step(tape, emb, state, &weights)?;
        Ok((g, state))
    }

    /// Joint network: log token probabilities for every encoder row against
    /// one prediction-network output. Training evaluates this with the full
    /// frame sequence, decoding with a single row; both share this one path.
    pub fn step_log_probs(&self, tape: &Tape, bound: &BoundParams, enc_rows: Var, g: Var) -> Var {
        let enc_proj = tape.matmul(enc_rows, bound.var("joint.enc.w"));
        let pred_proj = tape.matmul(g, bound.var("joint.pred.w"));
        let mixed = tape.tanh(tape.add_row(tape.add_row(enc_proj, pred_proj), bound.var("joint.b")));
        let logits = tape.add_row(tape.matmul(mixed, bound.var("joint.out.w")), bound.var("joint.out.b"));
        tape.row_log_softmax(logits)
    }

    /// Builds the alignment lattice for one utterance: runs the prediction
    /// network along the target prefix and collects blank and label log-prob
    /// columns per step.
    pub fn build_lattice(
        &self,
        tape: &Tape,
        bound: &BoundParams,
        enc_top: Var,
        targets: &[usize],
    ) -> Result<Lattice, AsrError> {
        let mut blank_cols = Vec::with_capacity(targets.len() + 1);
        let mut label_cols = Vec::with_capacity(targets.len());
        let mut state = None;
        let mut consumed = 0;
        loop {
            let (g, next_state) = self.prediction_step(
                tape,
                bound,
                if consumed == 0 { BLANK_ID } else { targets[consumed - 1] },
                state,
            )?;
            state = Some(next_state);
            let lp = self.step_log_probs(tape, bound, enc_top, g);
            blank_cols.push(tape.gather_col(lp, BLANK_ID));
            if consumed < targets.len() {
                label_cols.push(tape.gather_col(lp, targets[consumed]));
                consumed += 1;
            } else {
                break;
            }
        }
        Ok(Lattice {
            blank: tape.concat_cols(&blank_cols),
            label: if label_cols.is_empty() { None } else { Some(tape.concat_cols(&label_cols)) },
        })
    }
}
