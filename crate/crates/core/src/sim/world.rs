//! Synthetic speaker universe with controlled embedding geometry.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::kernel::l2_normalize;
use crate::sim::SimError;
use crate::speaker::SpeakerProfile;

/// A fixed universe of enrollable speakers whose d-vectors have an exact
/// pairwise cosine. Speaker `k` gets the unit vector
/// `sqrt(a)*c + sqrt(1-a)*b_k` where `c` and the `b_k` are disjoint
/// coordinate axes, so `cos(v_j, v_k) = a` for every distinct pair.
#[derive(Debug, Clone)]
pub struct SpeakerWorld {
    dvec_dim: usize,
    inter_cosine: f64,
    names: Vec<String>,
    dvectors: Vec<Vec<f64>>,
}

impl SpeakerWorld {
    pub fn new(universe: usize, dvec_dim: usize, inter_cosine: f64) -> Result<Self, SimError> {
        if universe == 0 {
            return Err(SimError::InfeasibleSpec("speaker universe is empty".into()));
        }
        if dvec_dim < universe + 1 {
            return Err(SimError::InfeasibleSpec(format!(
                "{universe} speakers with exact pairwise cosine need dimension {} but got {dvec_dim}",
                universe + 1
            )));
        }
        if !(0.0..1.0).contains(&inter_cosine) {
            return Err(SimError::InfeasibleSpec(format!(
                "inter-speaker cosine {inter_cosine} outside [0, 1)"
            )));
        }
        let shared = inter_cosine.sqrt();
        let own = (1.0 - inter_cosine).sqrt();
        let dvectors = (0..universe)
            .map(|k| {
                let mut v = vec![0.0; dvec_dim];
                v[0] = shared;
                v[k + 1] = own;
                v
            })
            .collect();
        let names = (0..universe).map(|k| format!("spk{k:02}")).collect();
        Ok(SpeakerWorld { dvec_dim, inter_cosine, names, dvectors })
    }

    pub fn speakers(&self) -> usize {
        self.names.len()
    }

    pub fn dvec_dim(&self) -> usize {
        self.dvec_dim
    }

    pub fn inter_cosine(&self) -> f64 {
        self.inter_cosine
    }

    pub fn name(&self, k: usize) -> &str {
        &self.names[k]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn dvector(&self, k: usize) -> &[f64] {
        &self.dvectors[k]
    }

    pub fn profile(&self, k: usize) -> SpeakerProfile {
        SpeakerProfile::new(self.names[k].clone(), self.dvectors[k].clone())
    }

    /// A noisy observation of speaker `k`: cosine to the true d-vector is
    /// exactly `sqrt(intra_cosine)`, and two observations of the same
    /// speaker have expected cosine `intra_cosine`. `intra_cosine = 1`
    /// returns the d-vector itself.
    pub fn observe(&self, k: usize, intra_cosine: f64, rng: &mut impl Rng) -> Vec<f64> {
        assert!((0.0..=1.0).contains(&intra_cosine), "intra cosine {intra_cosine} outside [0, 1]");
        let v = &self.dvectors[k];
        if intra_cosine == 1.0 {
            return v.clone();
        }
        let mut noise: Vec<f64> = (0..self.dvec_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let along: f64 = noise.iter().zip(v).map(|(n, x)| n * x).sum();
        for (n, x) in noise.iter_mut().zip(v) {
            *n -= along * x;
        }
        l2_normalize(&mut noise);
        let keep = intra_cosine.sqrt();
        let spread = (1.0 - intra_cosine).sqrt();
        v.iter().zip(&noise).map(|(x, n)| keep * x + spread * n).collect()
    }
}
