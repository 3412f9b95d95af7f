//! Pipeline configuration: one TOML file drives every stage, and the run
//! manifest records it verbatim.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use tsot_core::attrib::FinalizeRule;
use tsot_core::sim::MixtureSpec;

/// Attribution flavor: identify against enrolled profiles, or diarize by
/// online clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sid,
    Sd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSection {
    pub train_count: usize,
    pub eval_count: usize,
    pub spec: MixtureSpec,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection { train_count: 60, eval_count: 8, spec: MixtureSpec::default() }
    }
}

/// Encoder attention window and beam-search knobs shared by training,
/// decoding, and embedding extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    /// Attention chunk in encoder frames; absent means unbounded attention.
    pub chunk_frames: Option<usize>,
    /// Left-context chunks; absent means the full past.
    pub left_chunks: Option<usize>,
    pub beam: usize,
    pub max_symbols_per_frame: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            chunk_frames: Some(4),
            left_chunks: None,
            beam: 4,
            max_symbols_per_frame: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsrTrainSection {
    pub epochs: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
}

impl Default for AsrTrainSection {
    fn default() -> Self {
        AsrTrainSection { epochs: 40, peak_lr: 5e-3, warmup_steps: 20, weight_decay: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpkTrainSection {
    pub epochs: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub max_distractors: usize,
}

impl Default for SpkTrainSection {
    fn default() -> Self {
        SpkTrainSection {
            epochs: 150,
            peak_lr: 1.5e-3,
            warmup_steps: 20,
            weight_decay: 0.01,
            max_distractors: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributionSection {
    pub mode: Mode,
    pub delay_words: usize,
    pub sd_threshold: f64,
    pub finalize: FinalizeRule,
    pub max_binarize_neighbors: usize,
}

impl Default for AttributionSection {
    fn default() -> Self {
        AttributionSection {
            mode: Mode::Sid,
            delay_words: 2,
            sd_threshold: 0.98,
            finalize: FinalizeRule::RawAtFinalization,
            max_binarize_neighbors: 20,
        }
    }
}

/// Everything one pipeline run needs. `oracle_transcript` replaces decoding
/// with the ground-truth serialized target; `oracle_embeddings` replaces the
/// speaker module with the simulator's synthetic embeddings (attribution then
/// runs on the target stream, since those embeddings align with it). With
/// both set, no model is trained at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub oracle_transcript: bool,
    pub oracle_embeddings: bool,
    /// Delay values for an oracle-embedding sweep appended to the report.
    pub sweep_delays: Option<Vec<usize>>,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub asr_train: AsrTrainSection,
    pub spk_train: SpkTrainSection,
    pub attribution: AttributionSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::new(),
            seed: 0,
            oracle_transcript: false,
            oracle_embeddings: false,
            sweep_delays: None,
            corpus: CorpusSection::default(),
            model: ModelSection::default(),
            asr_train: AsrTrainSection::default(),
            spk_train: SpkTrainSection::default(),
            attribution: AttributionSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.out_dir.as_os_str().is_empty() {
            bail!("config needs an out_dir");
        }
        if self.corpus.eval_count == 0 {
            bail!("eval_count must be at least 1");
        }
        let trains = !(self.oracle_transcript && self.oracle_embeddings);
        if trains && self.corpus.train_count == 0 {
            bail!("train_count must be at least 1 unless both oracle modes are set");
        }
        if self.model.beam == 0 {
            bail!("beam must be at least 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_minimal_config_fills_defaults() {
        let config: RunConfig = toml::from_str("out_dir = \"run\"").unwrap();
        assert_eq!(config.corpus.train_count, 60);
        assert_eq!(config.corpus.eval_count, 8);
        assert_eq!(config.model.chunk_frames, Some(4));
        assert_eq!(config.attribution.delay_words, 2);
        assert!(config.validate().is_ok());
    }

    #[test]
    fn sections_override_field_by_field() {
        let text = r#"
            out_dir = "run"
            seed = 9
            oracle_transcript = true
            oracle_embeddings = true

            [corpus]
            train_count = 0
            eval_count = 3

            [corpus.spec]
            num_speakers = 3
            intra_cosine = 1.0

            [attribution]
            mode = "sd"
            delay_words = 1
        "#;
        let config: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(config.corpus.spec.num_speakers, 3);
        assert_eq!(config.corpus.spec.vocab_words, 32, "untouched fields keep defaults");
        assert_eq!(config.attribution.mode, Mode::Sd);
        assert_eq!(config.attribution.sd_threshold, 0.98);
        assert!(config.validate().is_ok(), "no training needs no train mixtures");
    }

    #[test]
    fn missing_out_dir_is_rejected() {
        let config: RunConfig = toml::from_str("seed = 1").unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn training_without_train_mixtures_is_rejected() {
        let config: RunConfig =
            toml::from_str("out_dir = \"run\"\n[corpus]\ntrain_count = 0").unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn the_config_round_trips_through_toml() {
        let mut config = RunConfig::default();
        config.out_dir = PathBuf::from("somewhere");
        config.sweep_delays = Some(vec![0, 2, 8]);
        let text = toml::to_string(&config).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, config);
    }
}
