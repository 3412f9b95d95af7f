//! Speaker module training against a frozen recognizer.
//!
//! The recognizer supplies two things per sample, both computed once up
//! front: its per-layer activations (the cross-attention keys and queries)
//! and the forced alignment giving each reference token an emission frame.
//! Only the speaker parameters receive updates.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::loss::speaker_loss;
use super::model::SpkModel;
use super::{SpeakerProfile, SpkError};
use crate::asr::{viterbi_align, AsrModel, CC_ID};
use crate::kernel::{AdamConfig, AdamW, LrSchedule, MaskSpec, Matrix, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpkTrainConfig {
    pub epochs: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    /// Distractor profiles drawn per step, before the per-token reference
    /// exclusion.
    pub max_distractors: usize,
    pub seed: u64,
}

/// One training stream: features, the serialized reference tokens, and the
/// speaker label of each token. Marker positions carry an unused label.
pub struct SpeakerSample {
    pub features: Matrix,
    pub tokens: Vec<usize>,
    pub speakers: Vec<String>,
}

struct SampleCache {
    asr_layers: Vec<Matrix>,
    tokens_with_frames: Vec<(usize, usize)>,
    references: Vec<SpeakerProfile>,
}

/// Trains the speaker parameters in place and returns the mean loss per
/// epoch. The recognizer is read-only throughout.
pub fn train_speaker_module(
    model: &mut SpkModel,
    asr: &AsrModel,
    dataset: &[SpeakerSample],
    pool: &[SpeakerProfile],
    mask: &MaskSpec,
    cfg: &SpkTrainConfig,
) -> Result<Vec<f64>, SpkError> {
    assert!(!dataset.is_empty(), "training needs at least one sample");
    assert!(!pool.is_empty(), "training needs at least one profile");
    let by_id: BTreeMap<&str, &SpeakerProfile> =
        pool.iter().map(|p| (p.speaker_id.as_str(), p)).collect();
    let mut caches = Vec::with_capacity(dataset.len());
    for sample in dataset {
        assert_eq!(sample.tokens.len(), sample.speakers.len(), "one label per token");
        let tape = Tape::new();
        let bound = asr.params.bind(&tape);
        let layers = asr.encode(&tape, &bound, &sample.features, mask)?;
        let asr_layers: Vec<Matrix> = layers.iter().map(|l| tape.value(*l)).collect();
        let frames = viterbi_align(asr, &sample.features, &sample.tokens, mask)?;
        let references = sample
            .tokens
            .iter()
            .zip(&sample.speakers)
            .map(|(&token, label)| {
                if token == CC_ID {
                    Ok(SpeakerProfile {
                        speaker_id: label.clone(),
                        dvector: vec![0.0; model.config.dvec_dim],
                    })
                } else {
                    by_id
                        .get(label.as_str())
                        .map(|p| (*p).clone())
                        .ok_or_else(|| SpkError::UnknownSpeaker(label.clone()))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        caches.push(SampleCache {
            asr_layers,
            tokens_with_frames: sample.tokens.iter().copied().zip(frames).collect(),
            references,
        });
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let schedule = LrSchedule {
        peak: cfg.peak_lr,
        warmup_steps: cfg.warmup_steps,
        total_steps: cfg.epochs * dataset.len(),
    };
    let mut opt = AdamW::new(AdamConfig { weight_decay: cfg.weight_decay, ..AdamConfig::default() });
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let drawn = pool.len().min(cfg.max_distractors);
            let distractors: Vec<SpeakerProfile> =
                pool.choose_multiple(&mut rng, drawn).cloned().collect();
            let cache = &caches[i];
            let (loss, grads) = speaker_loss(
                model,
                &dataset[i].features,
                &cache.asr_layers,
                &cache.tokens_with_frames,
                &cache.references,
                &distractors,
                mask,
            )?;
            opt.step(&mut model.params, &grads, schedule.at(step));
            step += 1;
            total += loss;
        }
        epoch_losses.push(total / dataset.len() as f64);
    }
    Ok(epoch_losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asr::AsrConfig;
    use crate::speaker::model::{stream_tvectors, SpkConfig};
    use crate::speaker::TVector;
    use crate::kernel::cosine;

    fn features_for(targets: &[usize], feat_dim: usize, frames_per_token: usize) -> Matrix {
        Matrix::from_fn(targets.len() * frames_per_token, feat_dim, |r, c| {
            if targets[r / frames_per_token] == c {
                1.0
            } else {
                0.0
            }
        })
    }

    fn toy_setup() -> (AsrModel, SpkModel) {
        let asr_config = AsrConfig {
            feat_dim: 5,
            model_dim: 8,
            layers: 1,
            heads: 2,
            ff_dim: 12,
            conv_width: 3,
            conv_strides: (2, 2),
            joint_dim: 8,
            vocab_size: 5,
            max_frames: 32,
        };
        let spk_config = SpkConfig::paired(&asr_config, 6);
        (AsrModel::new(asr_config, 31), SpkModel::new(spk_config, 32))
    }

    fn axis(dim: usize, i: usize, sign: f64) -> Vec<f64> {
        (0..dim).map(|j| if j == i { sign } else { 0.0 }).collect()
    }

    #[test]
    fn memorizes_one_stream_down_to_the_margin_floor() {
        // alternating speakers over four tokens, two orthogonal profiles.
        // cosine scores live in [-1, 1], so with one distractor left after
        // the reference exclusion a token's loss can never drop below
        // ln(1 + e^-2) ~ 0.127; the summed floor for four tokens sits near 1.
        // training should land close to it and make per-token argmax exact
        let (asr, mut spk) = toy_setup();
        let tokens = vec![2usize, 3, 4, 2];
        let speakers = vec!["alice".into(), "bob".into(), "alice".into(), "bob".into()];
        let sample = SpeakerSample {
            features: features_for(&tokens, 5, 4),
            tokens: tokens.clone(),
            speakers,
        };
        let pool = vec![
            SpeakerProfile::new("alice", axis(6, 0, 1.0)),
            SpeakerProfile::new("bob", axis(6, 1, 1.0)),
        ];
        let asr_snapshot: Vec<(String, Matrix)> =
            asr.params.iter().map(|(n, m)| (n.clone(), m.clone())).collect();
        let cfg = SpkTrainConfig {
            epochs: 2000,
            peak_lr: 3e-3,
            warmup_steps: 30,
            weight_decay: 0.0,
            max_distractors: 8,
            seed: 3,
        };
        let mask = MaskSpec::chunked(1, None);
        let losses = train_speaker_module(&mut spk, &asr, &[sample], &pool, &mask, &cfg).unwrap();
        assert!(losses.iter().all(|l| *l >= 0.0));
        let (first, last) = (losses[0], *losses.last().unwrap());
        assert!(last < 1.2, "loss {first} only reached {last}");
        assert!(last < first / 2.0);

        for (name, before) in &asr_snapshot {
            assert_eq!(asr.params.get(name), before, "recognizer parameter {name} moved");
        }

        // every trained embedding scores its own profile highest
        let feats = features_for(&tokens, 5, 4);
        let frames = viterbi_align(&asr, &feats, &tokens, &mask).unwrap();
        let with_frames: Vec<(usize, usize)> = tokens.iter().copied().zip(frames).collect();
        let tvs = stream_tvectors(&asr, &spk, &feats, &with_frames, &mask).unwrap();
        let score = |tv: &TVector, p: &SpeakerProfile| cosine(&tv.embedding, &p.dvector);
        for (u, owner) in [(0usize, 0usize), (1, 1), (2, 0), (3, 1)] {
            assert!(
                score(&tvs[u], &pool[owner]) > score(&tvs[u], &pool[1 - owner]),
                "token {u} misattributed"
            );
        }
    }

    #[test]
    fn training_is_reproducible_from_the_seed() {
        let run = || {
            let (asr, mut spk) = toy_setup();
            let tokens = vec![2usize, CC_ID, 3];
            let sample = SpeakerSample {
                features: features_for(&tokens, 5, 4),
                tokens,
                speakers: vec!["alice".into(), "none".into(), "bob".into()],
            };
            let pool = vec![
                SpeakerProfile::new("alice", axis(6, 1, 1.0)),
                SpeakerProfile::new("bob", axis(6, 2, 1.0)),
                SpeakerProfile::new("carol", axis(6, 3, 1.0)),
            ];
            let cfg = SpkTrainConfig {
                epochs: 30,
                peak_lr: 5e-3,
                warmup_steps: 5,
                weight_decay: 0.01,
                max_distractors: 2,
                seed: 9,
            };
            train_speaker_module(&mut spk, &asr, &[sample], &pool, &MaskSpec::unbounded(), &cfg)
                .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn unknown_speaker_labels_are_rejected() {
        let (asr, mut spk) = toy_setup();
        let tokens = vec![2usize];
        let sample = SpeakerSample {
            features: features_for(&tokens, 5, 4),
            tokens,
            speakers: vec!["mallory".into()],
        };
        let pool = vec![SpeakerProfile::new("alice", axis(6, 0, 1.0))];
        let cfg = SpkTrainConfig {
            epochs: 1,
            peak_lr: 1e-3,
            warmup_steps: 1,
            weight_decay: 0.0,
            max_distractors: 8,
            seed: 1,
        };
        let result =
            train_speaker_module(&mut spk, &asr, &[sample], &pool, &MaskSpec::unbounded(), &cfg);
        assert!(matches!(result, Err(SpkError::UnknownSpeaker(name)) if name == "mallory"));
    }
}
