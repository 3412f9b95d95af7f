//! AdamW with a warmup-then-linear-decay learning-rate schedule.

use std::collections::BTreeMap;

use super::matrix::Matrix;
use super::params::ParamSet;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

pub struct AdamW {
    cfg: AdamConfig,
    m: BTreeMap<String, Matrix>,
    v: BTreeMap<String, Matrix>,
    step_count: usize,
}

impl AdamW {
    pub fn new(cfg: AdamConfig) -> Self {
        AdamW { cfg, m: BTreeMap::new(), v: BTreeMap::new(), step_count: 0 }
    }

    /// Applies one update. Parameters missing from `grads` are left alone.
    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Matrix>, lr: f64) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        for (name, grad) in grads {
            if !params.contains(name) {
                continue;
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(grad.rows(), grad.cols()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(grad.rows(), grad.cols()));
            let value = params.get_mut(name);
            let (b1, b2, eps, wd) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps, self.cfg.weight_decay);
            for i in 0..grad.data().len() {
                let g = grad.data()[i];
                let mi = b1 * m.data()[i] + (1.0 - b1) * g;
                let vi = b2 * v.data()[i] + (1.0 - b2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                let p = &mut value.data_mut()[i];
                *p -= lr * (mhat / (vhat.sqrt() + eps) + wd * *p);
            }
        }
    }
}

/// Learning rate ramps linearly to `peak` over `warmup_steps`, then decays
/// linearly to zero at `total_steps`.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        assert!(self.total_steps > 0);
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        if step >= self.total_steps {
            return 0.0;
        }
        let span = (self.total_steps - self.warmup_steps).max(1) as f64;
        self.peak * (self.total_steps - step) as f64 / span
    }
}
