//! Gradient training of the transducer.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::loss::transducer_loss;
use super::model::AsrModel;
use super::AsrError;
use crate::kernel::{AdamConfig, AdamW, LrSchedule, MaskSpec, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

/// Trains in place over (features, target ids) pairs and returns the mean
/// loss per epoch. Sample order reshuffles every epoch from the config seed,
/// so runs are reproducible.
pub fn train_asr(
    model: &mut AsrModel,
    corpus: &[(Matrix, Vec<usize>)],
    mask: &MaskSpec,
    cfg: &TrainConfig,
) -> Result<Vec<f64>, AsrError> {
    assert!(!corpus.is_empty(), "training needs at least one sample");
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let schedule = LrSchedule {
        peak: cfg.peak_lr,
        warmup_steps: cfg.warmup_steps,
        total_steps: cfg.epochs * corpus.len(),
    };
    let mut opt = AdamW::new(AdamConfig { weight_decay: cfg.weight_decay, ..AdamConfig::default() });
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (features, targets) = &corpus[i];
            let (loss, grads) = transducer_loss(model, features, targets, mask)?;
            opt.step(&mut model.params, &grads, schedule.at(step));
            step += 1;
            total += loss;
        }
        epoch_losses.push(total / corpus.len() as f64);
    }
    Ok(epoch_losses)
}
