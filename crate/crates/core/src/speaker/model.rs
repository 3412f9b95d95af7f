//! Speaker encoder and embedding decoder.
//!
//! The encoder runs its own causal convolution stack over the input features,
//! then refines the result with cross-attention: queries and keys come from
//! the recognizer's activations at the layer below, values from the speaker
//! side, under the recognizer's own attention mask. There is no feed-forward
//! sublayer. The decoder is an LSTM that consumes, per recognized token, the
//! speaker activation at the token's emission frame plus a token embedding,
//! and its hidden output is the token's embedding vector.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{SpkError, TVector};
use crate::asr::{AsrConfig, AsrModel};
use crate::kernel::{
    lstm_step, lstm_zero_state, mha, BoundParams, LstmVars, MaskSpec, Matrix, ParamSet, Tape, Var,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpkConfig {
    pub feat_dim: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub conv_width: usize,
    pub conv_strides: (usize, usize),
    /// Width of the token embeddings, the LSTM, and the output vectors.
    pub dvec_dim: usize,
    pub vocab_size: usize,
}

impl SpkConfig {
    /// Configuration locked to a recognizer: same frame grid (conv widths and
    /// strides), same width and depth, so activations line up one to one.
    pub fn paired(asr: &AsrConfig, dvec_dim: usize) -> SpkConfig {
        SpkConfig {
            feat_dim: asr.feat_dim,
            model_dim: asr.model_dim,
            layers: asr.layers,
            heads: asr.heads,
            conv_width: asr.conv_width,
            conv_strides: asr.conv_strides,
            dvec_dim,
            vocab_size: asr.vocab_size,
        }
    }
}

pub struct SpkModel {
    pub config: SpkConfig,
    pub params: ParamSet,
}

fn dense(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::randn(rows, cols, 1.0 / (rows as f64).sqrt(), rng)
}

impl SpkModel {
    pub fn new(config: SpkConfig, seed: u64) -> SpkModel {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let c = &config;
        let mut p = ParamSet::new();
        p.insert("enc.conv0.w", dense(&mut rng, c.conv_width * c.feat_dim, c.model_dim));
        p.insert("enc.conv0.b", Matrix::zeros(1, c.model_dim));
        p.insert("enc.conv1.w", dense(&mut rng, c.conv_width * c.model_dim, c.model_dim));
        p.insert("enc.conv1.b", Matrix::zeros(1, c.model_dim));
        for l in 0..c.layers {
            let name = |n: &str| format!("enc.l{l}.{n}");
            p.insert(name("qk_ln.g"), Matrix::filled(1, c.model_dim, 1.0));
            p.insert(name("qk_ln.b"), Matrix::zeros(1, c.model_dim));
            p.insert(name("v_ln.g"), Matrix::filled(1, c.model_dim, 1.0));
            p.insert(name("v_ln.b"), Matrix::zeros(1, c.model_dim));
            p.insert(name("wq"), dense(&mut rng, c.model_dim, c.model_dim));
            p.insert(name("wk"), dense(&mut rng, c.model_dim, c.model_dim));
            p.insert(name("wv"), dense(&mut rng, c.model_dim, c.model_dim));
            p.insert(name("wo"), dense(&mut rng, c.model_dim, c.model_dim));
        }
        p.insert("dec.proj.w", dense(&mut rng, c.model_dim, c.dvec_dim));
        p.insert("dec.proj.b", Matrix::zeros(1, c.dvec_dim));
        p.insert("dec.embed", Matrix::randn(c.vocab_size, c.dvec_dim, 0.5, &mut rng));
        p.insert("dec.lstm.w_ih", dense(&mut rng, c.dvec_dim, 4 * c.dvec_dim));
        p.insert("dec.lstm.w_hh", dense(&mut rng, c.dvec_dim, 4 * c.dvec_dim));
        p.insert("dec.lstm.b", Matrix::zeros(1, 4 * c.dvec_dim));
        SpkModel { config, params: p }
    }

    /// Runs the speaker encoder against frozen recognizer activations.
    /// `asr_layers` is the full per-layer output of [`AsrModel::encode`] for
    /// the same features and mask; the returned vector mirrors it, index 0
    /// being the convolution output.
    pub fn encode(
        &self,
        tape: &Tape,
        bound: &BoundParams,
        features: &Matrix,
        asr_layers: &[Var],
        mask: &MaskSpec,
    ) -> Result<Vec<Var>, SpkError> {
        let c = &self.config;
        assert_eq!(asr_layers.len(), c.layers + 1, "recognizer layer stack depth");
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
        let asr_frames = tape.shape(asr_layers[0]).0;
        if frames != asr_frames {
            return Err(SpkError::FrameCountMismatch { asr: asr_frames, speaker: frames });
        }
        let mut z = h;
        let mut layers = Vec::with_capacity(c.layers + 1);
        layers.push(z);
        for l in 0..c.layers {
            let p = |n: &str| bound.var(&format!("enc.l{l}.{n}"));
            let qk = tape.layer_norm(asr_layers[l], p("qk_ln.g"), p("qk_ln.b"));
            let v = tape.layer_norm(z, p("v_ln.g"), p("v_ln.b"));
            let att = mha(
                tape,
                tape.matmul(qk, p("wq")),
                tape.matmul(qk, p("wk")),
                tape.matmul(v, p("wv")),
                c.heads,
                mask,
            )?;
            z = tape.add(z, tape.matmul(att, p("wo")));
            layers.push(z);
        }
        Ok(layers)
    }

    /// Embedding nodes for a token sequence, one per token, in order. Each
    /// step feeds the LSTM the projected speaker activation at the token's
    /// emission frame plus the token's embedding; the hidden output is the
    /// embedding. Channel-change markers run through the recurrence like any
    /// other token.
    pub fn tvector_vars(
        &self,
        tape: &Tape,
        bound: &BoundParams,
        spk_top: Var,
        tokens_with_frames: &[(usize, usize)],
    ) -> Result<Vec<Var>, SpkError> {
        let frames = tape.shape(spk_top).0;
        let weights = LstmVars {
            w_ih: bound.var("dec.lstm.w_ih"),
            w_hh: bound.var("dec.lstm.w_hh"),
            bias: bound.var("dec.lstm.b"),
        };
        let mut state = lstm_zero_state(tape, self.config.dvec_dim);
        let mut out = Vec::with_capacity(tokens_with_frames.len());
        for &(token, frame) in tokens_with_frames {
            if frame >= frames {
                return Err(SpkError::FrameOutOfRange { frame, frames });
            }
            let at_frame = tape.slice_rows(spk_top, frame, 1);
            let projected =
                tape.add_row(tape.matmul(at_frame, bound.var("dec.proj.w")), bound.var("dec.proj.b"));
            let x = tape.add(projected, tape.embed(bound.var("dec.embed"), &[token]));
            let (e, next) = lstm_step(tape, x, state, &weights)?;
            state = next;
            out.push(e);
        }
        Ok(out)
    }

    /// Evaluated embeddings for a token sequence.
    pub fn extract_tvectors(
        &self,
        tape: &Tape,
        bound: &BoundParams,
        spk_top: Var,
        tokens_with_frames: &[(usize, usize)],
    ) -> Result<Vec<TVector>, SpkError> {
        let vars = self.tvector_vars(tape, bound, spk_top, tokens_with_frames)?;
        Ok(vars
            .iter()
            .zip(tokens_with_frames)
            .enumerate()
            .map(|(u, (&e, &(_, frame)))| TVector {
                embedding: tape.value(e).row(0).to_vec(),
                token_index: u,
                emission_frame: frame,
            })
            .collect())
    }
}

/// Full inference path for one stream: encode with the recognizer, cross-
/// attend with the speaker encoder, and extract one embedding per decoded
/// token. `tokens_with_frames` pairs each token id with its emission frame,
/// as reported by the decoder.
pub fn stream_tvectors(
    asr: &AsrModel,
    spk: &SpkModel,
    features: &Matrix,
    tokens_with_frames: &[(usize, usize)],
    mask: &MaskSpec,
) -> Result<Vec<TVector>, SpkError> {
    let tape = Tape::new();
    let asr_bound = asr.params.bind(&tape);
    let asr_layers = asr.encode(&tape, &asr_bound, features, mask)?;
    let spk_bound = spk.params.bind(&tape);
    let spk_layers = spk.encode(&tape, &spk_bound, features, &asr_layers, mask)?;
    let top = *spk_layers.last().expect("speaker encoder returns at least one layer");
    spk.extract_tvectors(&tape, &spk_bound, top, tokens_with_frames)
}
