//! Cosine-softmax speaker identification loss.
//!
//! Each scorable token contributes the negative log-probability of its
//! reference speaker under a softmax over cosine similarities between the
//! token's embedding and a candidate set: the reference vector plus drawn
//! distractor profiles. Distractors matching the reference speaker are
//! dropped per token, and channel-change markers are skipped entirely since
//! their embeddings never drive an attribution decision.

use std::collections::BTreeMap;

use super::model::SpkModel;
use super::{SpeakerProfile, SpkError};
use crate::asr::CC_ID;
use crate::kernel::{row_norm, MaskSpec, Matrix, Tape, Var};

fn cosine_to(tape: &Tape, e: Var, e_norm: Var, profile: Var) -> Var {
    let dot = tape.sum(tape.mul(e, profile));
    tape.div_by_scalar(tape.div_by_scalar(dot, e_norm), row_norm(tape, profile))
}

/// Loss node over already-extracted embedding nodes. `token_ids` and
/// `speakers` run parallel to `tvectors`; entries at channel-change positions
/// are ignored.
pub fn cosine_softmax_loss(
    tape: &Tape,
    tvectors: &[Var],
    token_ids: &[usize],
    speakers: &[SpeakerProfile],
    distractors: &[SpeakerProfile],
) -> Result<Var, SpkError> {
    assert_eq!(tvectors.len(), token_ids.len(), "one id per embedding");
    assert_eq!(speakers.len(), token_ids.len(), "one reference per embedding");
    let distractor_vars: Vec<Var> = distractors
        .iter()
        .map(|d| tape.leaf(Matrix::row_vector(&d.dvector)))
        .collect();
    let mut total: Option<Var> = None;
    for (u, &e) in tvectors.iter().enumerate() {
        if token_ids[u] == CC_ID {
            continue;
        }
        let reference = &speakers[u];
        let e_norm = row_norm(tape, e);
        let ref_var = tape.leaf(Matrix::row_vector(&reference.dvector));
        let ref_cos = cosine_to(tape, e, e_norm, ref_var);
        let mut scores = vec![ref_cos];
        for (d, &dv) in distractors.iter().zip(&distractor_vars) {
            if d.speaker_id != reference.speaker_id {
                scores.push(cosine_to(tape, e, e_norm, dv));
            }
        }
        let denom = tape.log_sum_exp(tape.concat_cols(&scores));
        let loss_u = tape.sub(denom, ref_cos);
        total = Some(match total {
            None => loss_u,
            Some(t) => tape.add(t, loss_u),
        });
    }
    total.ok_or(SpkError::EmptyReference)
}

/// Training objective for one stream against frozen recognizer activations.
/// `asr_layers` holds the per-layer recognizer outputs for these features
/// (computed once and cached by the caller); gradients cover the speaker
/// parameters only.
pub fn speaker_loss(
    model: &SpkModel,
    features: &Matrix,
    asr_layers: &[Matrix],
    tokens_with_frames: &[(usize, usize)],
    speakers: &[SpeakerProfile],
    distractors: &[SpeakerProfile],
    mask: &MaskSpec,
) -> Result<(f64, BTreeMap<String, Matrix>), SpkError> {
    let tape = Tape::new();
    let bound = model.params.bind(&tape);
    let asr_vars: Vec<Var> = asr_layers.iter().map(|m| tape.leaf(m.clone())).collect();
    let spk_layers = model.encode(&tape, &bound, features, &asr_vars, mask)?;
    let top = *spk_layers.last().expect("speaker encoder returns at least one layer");
    let tvectors = model.tvector_vars(&tape, &bound, top, tokens_with_frames)?;
    let ids: Vec<usize> = tokens_with_frames.iter().map(|&(id, _)| id).collect();
    let loss = cosine_softmax_loss(&tape, &tvectors, &ids, speakers, distractors)?;
    let grads = bound.grads(&tape, &tape.backward(loss));
    Ok((tape.scalar_value(loss), grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asr::{AsrConfig, AsrModel};
    use crate::kernel::grad_check;
    use crate::speaker::model::{stream_tvectors, SpkConfig};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn unit(dim: usize, axis: usize) -> Vec<f64> {
        (0..dim).map(|i| if i == axis { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn orthogonal_distractors_give_the_closed_form_loss() {
        // embedding equal to the reference, seven orthogonal distractors:
        // -log(e / (e + 7))
        let tape = Tape::new();
        let e = tape.leaf(Matrix::row_vector(&unit(8, 0)));
        let speakers = vec![SpeakerProfile::new("ref", unit(8, 0))];
        let distractors: Vec<SpeakerProfile> = (1..8)
            .map(|axis| SpeakerProfile::new(format!("d{axis}"), unit(8, axis)))
            .collect();
        let loss = cosine_softmax_loss(&tape, &[e], &[2], &speakers, &distractors).unwrap();
        assert!((tape.scalar_value(loss) - 1.274_008_836_227_8).abs() < 1e-9);
    }

    #[test]
    fn no_distractors_means_exactly_zero_loss() {
        let tape = Tape::new();
        let e = tape.leaf(Matrix::row_vector(&[0.3, -0.4, 1.1]));
        let speakers = vec![SpeakerProfile::new("ref", vec![1.0, 2.0, -0.5])];
        let loss = cosine_softmax_loss(&tape, &[e], &[3], &speakers, &[]).unwrap();
        assert_eq!(tape.scalar_value(loss), 0.0);
    }

    #[test]
    fn distractors_sharing_the_reference_speaker_are_dropped() {
        let tape = Tape::new();
        let e = tape.leaf(Matrix::row_vector(&unit(4, 0)));
        let speakers = vec![SpeakerProfile::new("ref", unit(4, 0))];
        // a distractor with the reference id contributes nothing, even with
        // a different vector
        let same_id = vec![SpeakerProfile::new("ref", unit(4, 1))];
        let loss = cosine_softmax_loss(&tape, &[e], &[2], &speakers, &same_id).unwrap();
        assert_eq!(tape.scalar_value(loss), 0.0);
    }

    #[test]
    fn every_added_distractor_can_only_raise_the_loss() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        for trial in 0..50 {
            let dim = 6;
            let tape = Tape::new();
            let e = tape.leaf(Matrix::randn(1, dim, 1.0, &mut rng));
            let speakers =
                vec![SpeakerProfile::new("ref", (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())];
            let mut pool: Vec<SpeakerProfile> = Vec::new();
            let mut previous = 0.0;
            for k in 0..4 {
                let loss =
                    cosine_softmax_loss(&tape, &[e], &[2], &speakers, &pool).unwrap();
                let value = tape.scalar_value(loss);
                assert!(
                    value >= previous - 1e-12,
                    "trial {trial}: loss fell from {previous} to {value} at {k} distractors"
                );
                previous = value;
                pool.push(SpeakerProfile::new(
                    format!("d{k}"),
                    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                ));
            }
        }
    }

    #[test]
    fn rescaling_an_embedding_leaves_the_loss_unchanged() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let speakers = vec![SpeakerProfile::new("ref", vec![0.2, -1.0, 0.4, 0.8])];
        let distractors = vec![
            SpeakerProfile::new("a", vec![-0.5, 0.1, 0.9, -0.2]),
            SpeakerProfile::new("b", vec![1.0, 1.0, -1.0, 0.3]),
        ];
        for _ in 0..20 {
            let tape = Tape::new();
            // keep every scaled variant's squared norm well above the
            // zero-guard epsilon inside the norm computation
            let mut data: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            crate::kernel::l2_normalize(&mut data);
            let e = tape.leaf(Matrix::row_vector(&data).scaled(4.0));
            let base = tape.scalar_value(
                cosine_softmax_loss(&tape, &[e], &[2], &speakers, &distractors).unwrap(),
            );
            for c in [0.5, 3.0, 50.0] {
                let scaled = tape.scale(e, c);
                let value = tape.scalar_value(
                    cosine_softmax_loss(&tape, &[scaled], &[2], &speakers, &distractors).unwrap(),
                );
                assert!((value - base).abs() < 1e-12, "scale {c}: {base} vs {value}");
            }
        }
    }

    fn tiny_pair() -> (AsrModel, SpkModel) {
        let asr_config = AsrConfig {
            feat_dim: 4,
            model_dim: 8,
            layers: 1,
            heads: 2,
            ff_dim: 8,
            conv_width: 2,
            conv_strides: (2, 1),
            joint_dim: 6,
            vocab_size: 5,
            max_frames: 16,
        };
        let spk_config = SpkConfig::paired(&asr_config, 4);
        (AsrModel::new(asr_config, 21), SpkModel::new(spk_config, 22))
    }

    fn frozen_layers(asr: &AsrModel, feats: &Matrix, mask: &MaskSpec) -> Vec<Matrix> {
        let tape = Tape::new();
        let bound = asr.params.bind(&tape);
        let layers = asr.encode(&tape, &bound, feats, mask).unwrap();
        layers.iter().map(|l| tape.value(*l)).collect()
    }

    #[test]
    fn markers_are_scored_never_but_still_drive_the_recurrence() {
        let (asr, spk) = tiny_pair();
        let mut rng = ChaCha12Rng::seed_from_u64(43);
        let feats = Matrix::randn(8, 4, 1.0, &mut rng);
        let mask = MaskSpec::unbounded();
        let layers = frozen_layers(&asr, &feats, &mask);
        let tokens = [(2usize, 0usize), (CC_ID, 1), (3, 3)];
        let speakers = |marker_id: &str| {
            vec![
                SpeakerProfile::new("alice", unit(4, 0)),
                SpeakerProfile::new(marker_id, unit(4, 1)),
                SpeakerProfile::new("bob", unit(4, 2)),
            ]
        };
        let distractors = vec![
            SpeakerProfile::new("alice", unit(4, 0)),
            SpeakerProfile::new("bob", unit(4, 2)),
            SpeakerProfile::new("carol", unit(4, 3)),
        ];
        let (a, _) =
            speaker_loss(&spk, &feats, &layers, &tokens, &speakers("alice"), &distractors, &mask)
                .unwrap();
        let (b, _) =
            speaker_loss(&spk, &feats, &layers, &tokens, &speakers("carol"), &distractors, &mask)
                .unwrap();
        assert_eq!(a, b, "the marker's reference entry must be ignored");

        // the marker still advances the decoder state: dropping it changes
        // the embedding of the token after it
        let with_marker = stream_tvectors(&asr, &spk, &feats, &tokens, &mask).unwrap();
        let without = stream_tvectors(&asr, &spk, &feats, &[(2, 0), (3, 3)], &mask).unwrap();
        let diff: f64 = with_marker[2]
            .embedding
            .iter()
            .zip(&without[1].embedding)
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 1e-9);
    }

    #[test]
    fn marker_only_streams_are_an_error() {
        let (asr, spk) = tiny_pair();
        let mut rng = ChaCha12Rng::seed_from_u64(44);
        let feats = Matrix::randn(8, 4, 1.0, &mut rng);
        let mask = MaskSpec::unbounded();
        let layers = frozen_layers(&asr, &feats, &mask);
        let speakers = vec![SpeakerProfile::new("x", unit(4, 0))];
        let result =
            speaker_loss(&spk, &feats, &layers, &[(CC_ID, 0)], &speakers, &[], &mask);
        assert!(matches!(result, Err(SpkError::EmptyReference)));
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences_on_a_parameter() {
        let (asr, spk) = tiny_pair();
        let mut rng = ChaCha12Rng::seed_from_u64(45);
        let feats = Matrix::randn(8, 4, 1.0, &mut rng);
        let mask = MaskSpec::chunked(2, Some(2));
        let layers = frozen_layers(&asr, &feats, &mask);
        let tokens = [(2usize, 0usize), (3, 2)];
        let speakers = vec![
            SpeakerProfile::new("alice", unit(4, 0)),
            SpeakerProfile::new("bob", unit(4, 1)),
        ];
        let distractors = vec![
            SpeakerProfile::new("bob", unit(4, 1)),
            SpeakerProfile::new("carol", unit(4, 3)),
        ];
        let (_, grads) =
            speaker_loss(&spk, &feats, &layers, &tokens, &speakers, &distractors, &mask).unwrap();
        for name in ["dec.lstm.w_ih", "dec.embed", "dec.proj.w", "enc.l0.wv", "enc.l0.wq", "enc.conv0.w"] {
            let base = spk.params.get(name);
            let shape = base.shape();
            let point = base.data().to_vec();
            let analytic = grads[name].data().to_vec();
            let f = |x: &[f64]| {
                let mut m = SpkModel { config: spk.config.clone(), params: spk.params.clone() };
                *m.params.get_mut(name) = Matrix::from_vec(shape.0, shape.1, x.to_vec());
                speaker_loss(&m, &feats, &layers, &tokens, &speakers, &distractors, &mask)
                    .unwrap()
                    .0
            };
            let err = grad_check(f, &analytic, &point, 1e-4).unwrap();
            assert!(err < 1e-4, "{name}: relative error {err}");
        }
    }
}
