//! Mixture generation: utterances, timing, features, and oracle embeddings.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::asr::Vocab;
use crate::kernel::Matrix;
use crate::serial::{merge_streams, serialize, SerializedStream, TokenEvent};
use crate::sim::world::SpeakerWorld;
use crate::sim::{derive_seed, SimError};
use crate::speaker::{SpeakerProfile, SpeakerSample, TVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureSpec {
    /// Utterances per mixture, one distinct speaker each.
    pub num_speakers: usize,
    /// Enrollable speakers the mixture's speakers and pool are drawn from.
    pub universe_speakers: usize,
    /// Candidate profiles handed to identification, true speakers included.
    pub pool_size: usize,
    /// Serialization overlap budget M.
    pub max_overlap: usize,
    /// Word vocabulary size (markers and blank come on top).
    pub vocab_words: usize,
    /// Inclusive range of tokens per utterance.
    pub tokens_per_utterance: (usize, usize),
    /// Uniform window for the start delay between consecutive utterances,
    /// in seconds.
    pub delay_range_seconds: (f64, f64),
    /// Duration of every word, in seconds.
    pub word_duration: f64,
    /// Feature frames per token block. Markers carry no frames of their
    /// own, so keep this at twice the encoder subsampling factor or more;
    /// otherwise serialized targets overrun the alignment lattice.
    pub frames_per_token: usize,
    pub dvec_dim: usize,
    /// Expected cosine between two observations of one speaker; 1 makes
    /// oracle embeddings noiseless.
    pub intra_cosine: f64,
    /// Exact cosine between distinct speakers' d-vectors.
    pub inter_cosine: f64,
    /// Weight of the speaker-signature column added to each feature frame.
    pub signature_scale: f64,
    /// Standard deviation of the feature noise.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> MixtureSpec {
        MixtureSpec {
            num_speakers: 2,
            universe_speakers: 16,
            pool_size: 8,
            max_overlap: 2,
            vocab_words: 32,
            tokens_per_utterance: (5, 30),
            delay_range_seconds: (0.0, 3.0),
            word_duration: 0.34,
            frames_per_token: 8,
            dvec_dim: 24,
            intra_cosine: 0.99,
            inter_cosine: 0.2,
            signature_scale: 0.8,
            feature_noise: 0.05,
            seed: 0,
        }
    }
}

impl MixtureSpec {
    /// Feature width: one column per vocabulary id (blank and marker
    /// included) plus one signature column per universe speaker.
    pub fn feat_dim(&self) -> usize {
        self.vocab_words + 2 + self.universe_speakers
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::numbered(self.vocab_words)
    }

    fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::InfeasibleSpec(msg));
        if self.num_speakers == 0 {
            return fail("a mixture needs at least one speaker".into());
        }
        if self.num_speakers > self.universe_speakers {
            return fail(format!(
                "{} speakers per mixture exceed the {}-speaker universe",
                self.num_speakers, self.universe_speakers
            ));
        }
        if self.pool_size < self.num_speakers || self.pool_size > self.universe_speakers {
            return fail(format!(
                "pool of {} cannot cover {} active speakers from a universe of {}",
                self.pool_size, self.num_speakers, self.universe_speakers
            ));
        }
        if self.max_overlap == 0 {
            return fail("overlap budget must be at least 1".into());
        }
        if self.vocab_words == 0 {
            return fail("empty vocabulary".into());
        }
        let (lo, hi) = self.tokens_per_utterance;
        if lo == 0 || lo > hi {
            return fail(format!("bad tokens-per-utterance range {lo}..={hi}"));
        }
        let (dlo, dhi) = self.delay_range_seconds;
        if dlo < 0.0 || dlo > dhi {
            return fail(format!("bad delay range {dlo}..{dhi}"));
        }
        if self.word_duration <= 0.0 {
            return fail(format!("word duration {} not positive", self.word_duration));
        }
        if self.frames_per_token == 0 {
            return fail("token blocks need at least one frame".into());
        }
        if !(0.0..=1.0).contains(&self.intra_cosine) {
            return fail(format!("intra cosine {} outside [0, 1]", self.intra_cosine));
        }
        Ok(())
    }
}

/// One generated sample. `events`, `speakers`, and `oracle_tvectors` are
/// aligned with the non-marker tokens of `target` in stream order.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub features: Matrix,
    pub events: Vec<TokenEvent>,
    pub target: SerializedStream,
    /// Ground-truth speaker of every non-marker token.
    pub speakers: Vec<String>,
    pub oracle_tvectors: Vec<TVector>,
    /// Candidate profiles for identification; contains every active speaker.
    pub pool: Vec<SpeakerProfile>,
    /// Names of the speakers actually talking in this mixture.
    pub active: Vec<String>,
    /// Vocabulary ids of the full serialized target, markers included.
    pub target_ids: Vec<usize>,
}

impl Mixture {
    /// The mixture as a recognizer training pair.
    pub fn asr_sample(&self) -> (Matrix, Vec<usize>) {
        (self.features.clone(), self.target_ids.clone())
    }

    /// The mixture as a speaker-module training stream. Marker entries
    /// carry the following token's speaker; the loss never scores them.
    pub fn speaker_sample(&self) -> SpeakerSample {
        let mut labels = vec![String::new(); self.target_ids.len()];
        let mut word = self.speakers.len();
        for (i, entry) in self.target.entries.iter().enumerate().rev() {
            if !entry.is_cc() {
                word -= 1;
            }
            labels[i] = self.speakers[word.min(self.speakers.len() - 1)].clone();
        }
        SpeakerSample {
            features: self.features.clone(),
            tokens: self.target_ids.clone(),
            speakers: labels,
        }
    }
}

/// Generates one mixture from the spec's seed.
pub fn generate_mixture(spec: &MixtureSpec) -> Result<Mixture, SimError> {
    spec.validate()?;
    let world = SpeakerWorld::new(spec.universe_speakers, spec.dvec_dim, spec.inter_cosine)?;
    let vocab = spec.vocab();
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);

    let active_idx: Vec<usize> =
        rand::seq::index::sample(&mut rng, spec.universe_speakers, spec.num_speakers).into_vec();

    // Utterance token ids, then start times under the overlap budget: an
    // utterance may not begin before the one `max_overlap` places earlier
    // has ended.
    let (lo, hi) = spec.tokens_per_utterance;
    let utterances: Vec<Vec<usize>> = (0..spec.num_speakers)
        .map(|_| {
            let len = rng.gen_range(lo..=hi);
            (0..len).map(|_| rng.gen_range(2..vocab.size())).collect()
        })
        .collect();
    let (dlo, dhi) = spec.delay_range_seconds;
    let mut starts: Vec<f64> = Vec::with_capacity(utterances.len());
    for i in 0..utterances.len() {
        let mut start = if i == 0 {
            0.0
        } else {
            let delay = if dlo == dhi { dlo } else { rng.gen_range(dlo..dhi) };
            starts[i - 1] + delay
        };
        if i >= spec.max_overlap {
            let blocker: f64 = starts[i - spec.max_overlap]
                + utterances[i - spec.max_overlap].len() as f64 * spec.word_duration;
            start = start.max(blocker);
        }
        starts.push(start);
    }

    let streams: Vec<Vec<TokenEvent>> = utterances
        .iter()
        .zip(&starts)
        .zip(&active_idx)
        .map(|((ids, &start), &spk)| {
            ids.iter()
                .enumerate()
                .map(|(j, &id)| TokenEvent {
                    token: vocab.symbol(id).to_string(),
                    speaker: world.name(spk).to_string(),
                    start: start + j as f64 * spec.word_duration,
                    duration: spec.word_duration,
                    channel: None,
                })
                .collect()
        })
        .collect();
    let events = merge_streams(&streams)?;
    let target = serialize(&streams, spec.max_overlap)?;
    let entry_texts: Vec<&str> = target.entries.iter().map(|e| e.as_str()).collect();
    let target_ids = vocab.encode(&entry_texts)?;

    // Features follow the merged token order: one block per token, the
    // token's own column plus its speaker's signature column, under noise.
    let speaker_idx: Vec<usize> = events
        .iter()
        .map(|e| world.index_of(&e.speaker).expect("event speakers come from the world"))
        .collect();
    let event_ids = vocab.encode(&events.iter().map(|e| e.token.as_str()).collect::<Vec<_>>())?;
    let fpt = spec.frames_per_token;
    let mut features = Matrix::zeros(events.len() * fpt, spec.feat_dim());
    for (g, (&id, &spk)) in event_ids.iter().zip(&speaker_idx).enumerate() {
        for f in 0..fpt {
            let row = features.row_mut(g * fpt + f);
            row[id] = 1.0;
            row[vocab.size() + spk] = spec.signature_scale;
            for x in row.iter_mut() {
                *x += spec.feature_noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    let oracle_tvectors: Vec<TVector> = speaker_idx
        .iter()
        .enumerate()
        .map(|(g, &spk)| TVector {
            embedding: world.observe(spk, spec.intra_cosine, &mut rng),
            token_index: g,
            emission_frame: (g + 1) * fpt - 1,
        })
        .collect();

    let mut pool_idx = active_idx.clone();
    let mut others: Vec<usize> =
        (0..spec.universe_speakers).filter(|k| !active_idx.contains(k)).collect();
    others.shuffle(&mut rng);
    pool_idx.extend(others.into_iter().take(spec.pool_size - spec.num_speakers));
    pool_idx.shuffle(&mut rng);
    let pool = pool_idx.iter().map(|&k| world.profile(k)).collect();

    Ok(Mixture {
        features,
        speakers: events.iter().map(|e| e.speaker.clone()).collect(),
        events,
        target,
        oracle_tvectors,
        pool,
        active: active_idx.iter().map(|&k| world.name(k).to_string()).collect(),
        target_ids,
    })
}

/// Generates a corpus of independent mixtures; entry `i` runs on a seed
/// derived from the spec seed and `i`.
pub fn generate_corpus(spec: &MixtureSpec, count: usize) -> Result<Vec<Mixture>, SimError> {
    (0..count)
        .map(|i| {
            let sample_spec =
                MixtureSpec { seed: derive_seed(spec.seed, i as u64), ..spec.clone() };
            generate_mixture(&sample_spec)
        })
        .collect()
}

/// A rapid-turn conversation: `turns` sequential non-overlapping utterances
/// of exactly `block` tokens each, rotating through `num_speakers` speakers.
/// The serialized target stays single-channel, so ground-truth changes sit
/// every `block` tokens. Oracle embeddings follow the spec's intra cosine.
pub fn rapid_turn_mixture(
    spec: &MixtureSpec,
    turns: usize,
    block: usize,
) -> Result<Mixture, SimError> {
    if turns == 0 || block == 0 {
        return Err(SimError::InfeasibleSpec("rapid-turn fixture needs turns and block > 0".into()));
    }
    if turns < spec.num_speakers {
        return Err(SimError::InfeasibleSpec(format!(
            "{turns} turns cannot rotate through {} speakers",
            spec.num_speakers
        )));
    }
    spec.validate()?;
    let world =
        SpeakerWorld::new(spec.universe_speakers, spec.dvec_dim, spec.inter_cosine)?;
    let vocab = spec.vocab();
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let active_idx: Vec<usize> =
        rand::seq::index::sample(&mut rng, spec.universe_speakers, spec.num_speakers).into_vec();

    // One stream per turn; serialization merges them back-to-back. A single
    // virtual channel keeps every change visible to one stepper.
    let streams: Vec<Vec<TokenEvent>> = (0..turns)
        .map(|t| {
            let spk = active_idx[t % active_idx.len()];
            (0..block)
                .map(|j| TokenEvent {
                    token: vocab.symbol(rng.gen_range(2..vocab.size())).to_string(),
                    speaker: world.name(spk).to_string(),
                    start: (t * block + j) as f64 * spec.word_duration,
                    duration: spec.word_duration,
                    channel: None,
                })
                .collect()
        })
        .collect();
    let events = merge_streams(&streams)?;
    let target = serialize(&streams, 1)?;
    let entry_texts: Vec<&str> = target.entries.iter().map(|e| e.as_str()).collect();
    let target_ids = vocab.encode(&entry_texts)?;

    let speaker_idx: Vec<usize> = events
        .iter()
        .map(|e| world.index_of(&e.speaker).expect("event speakers come from the world"))
        .collect();
    let event_ids = vocab.encode(&events.iter().map(|e| e.token.as_str()).collect::<Vec<_>>())?;
    let fpt = spec.frames_per_token;
    let mut features = Matrix::zeros(events.len() * fpt, spec.feat_dim());
    for (g, (&id, &spk)) in event_ids.iter().zip(&speaker_idx).enumerate() {
        for f in 0..fpt {
            let row = features.row_mut(g * fpt + f);
            row[id] = 1.0;
            row[vocab.size() + spk] = spec.signature_scale;
            for x in row.iter_mut() {
                *x += spec.feature_noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let oracle_tvectors: Vec<TVector> = speaker_idx
        .iter()
        .enumerate()
        .map(|(g, &spk)| TVector {
            embedding: world.observe(spk, spec.intra_cosine, &mut rng),
            token_index: g,
            emission_frame: (g + 1) * fpt - 1,
        })
        .collect();

    let mut pool_idx = active_idx.clone();
    let mut others: Vec<usize> =
        (0..spec.universe_speakers).filter(|k| !active_idx.contains(k)).collect();
    others.shuffle(&mut rng);
    pool_idx.extend(others.into_iter().take(spec.pool_size - spec.num_speakers));
    pool_idx.shuffle(&mut rng);
    let pool = pool_idx.iter().map(|&k| world.profile(k)).collect();

    Ok(Mixture {
        features,
        speakers: events.iter().map(|e| e.speaker.clone()).collect(),
        events,
        target,
        oracle_tvectors,
        pool,
        active: active_idx.iter().map(|&k| world.name(k).to_string()).collect(),
        target_ids,
    })
}
