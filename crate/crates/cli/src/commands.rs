//! One function per subcommand. Each returns the text it wants on stdout so
//! `main` stays a thin dispatcher.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Args;
use tsot_core::asr::{
    algorithmic_latency, beam_decode, train_asr, AsrConfig, AsrModel, StopPolicy, TrainConfig,
};
use tsot_core::attrib::{attribute_stream, AttribConfig, AttributionMode, FinalizeRule};
use tsot_core::io::{
    load_asr, load_corpus, read_jsonl, read_stream, save_asr, save_corpus, save_spk, write_jsonl,
};
use tsot_core::kernel::MaskSpec;
use tsot_core::metrics::{align, cpwer, sawer, AttributedToken};
use tsot_core::serial::TokenEvent;
use tsot_core::sim::generate_corpus;
use tsot_core::speaker::{
    train_speaker_module, SpeakerProfile, SpkConfig, SpkModel, SpkTrainConfig, TVector,
};

use crate::config::{Mode, RunConfig};
use crate::pipeline::{render_report, run_pipeline, sanitize_markers};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML file of corpus parameters; omitted fields take defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Directory the corpus is written to.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    /// Overrides the seed from the spec file.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn simulate(args: &SimulateArgs) -> anyhow::Result<String> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => tsot_core::sim::MixtureSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let corpus = generate_corpus(&spec, args.count)?;
    save_corpus(&args.out, &spec, &corpus)?;
    let tokens: usize = corpus.iter().map(|m| m.events.len()).sum();
    Ok(format!(
        "wrote {} mixtures ({} words) to {}",
        corpus.len(),
        tokens,
        args.out.display()
    ))
}

#[derive(Debug, Args)]
pub struct AsrTrainFlags {
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5e-3)]
    pub peak_lr: f64,
    #[arg(long, default_value_t = 20)]
    pub warmup_steps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SpkTrainFlags {
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1.5e-3)]
    pub peak_lr: f64,
    #[arg(long, default_value_t = 20)]
    pub warmup_steps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct MaskFlags {
    /// Attention chunk size in encoder frames; 0 means unbounded.
    #[arg(long, default_value_t = 4)]
    pub chunk_frames: usize,
    /// How many past chunks each frame may attend to; unlimited if absent.
    #[arg(long)]
    pub left_chunks: Option<usize>,
}

impl MaskFlags {
    fn mask(&self) -> MaskSpec {
        if self.chunk_frames == 0 {
            MaskSpec::unbounded()
        } else {
            MaskSpec::chunked(self.chunk_frames, self.left_chunks)
        }
    }
}

#[derive(Debug, Args)]
pub struct AsrTrainArgs {
    /// Corpus directory produced by `simulate`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint path to write.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: AsrTrainFlags,
    #[command(flatten)]
    pub mask: MaskFlags,
}

pub fn asr_train(args: &AsrTrainArgs) -> anyhow::Result<String> {
    let (spec, corpus) = load_corpus(&args.corpus)?;
    if corpus.is_empty() {
        bail!("corpus {} holds no mixtures", args.corpus.display());
    }
    let mut model = AsrModel::new(AsrConfig::toy(spec.feat_dim(), spec.vocab().size()), args.train.seed);
    let samples: Vec<_> = corpus.iter().map(|m| m.asr_sample()).collect();
    let cfg = TrainConfig {
        epochs: args.train.epochs,
        peak_lr: args.train.peak_lr,
        warmup_steps: args.train.warmup_steps,
        weight_decay: args.train.weight_decay,
        seed: args.train.seed,
    };
    let losses = train_asr(&mut model, &samples, &args.mask.mask(), &cfg)?;
    save_asr(&args.out, &model)?;
    Ok(format!(
        "trained recognizer on {} mixtures, loss {:.4} -> {:.4}, saved {}",
        corpus.len(),
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    ))
}

#[derive(Debug, Args)]
pub struct SpkTrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Recognizer checkpoint the speaker module attaches to.
    #[arg(long)]
    pub asr: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: SpkTrainFlags,
    #[arg(long, default_value_t = 7)]
    pub max_distractors: usize,
    #[command(flatten)]
    pub mask: MaskFlags,
}

pub fn spk_train(args: &SpkTrainArgs) -> anyhow::Result<String> {
    let (spec, corpus) = load_corpus(&args.corpus)?;
    if corpus.is_empty() {
        bail!("corpus {} holds no mixtures", args.corpus.display());
    }
    let asr = load_asr(&args.asr)?;
    let mut model = SpkModel::new(SpkConfig::paired(&asr.config, spec.dvec_dim), args.train.seed);
    let dataset: Vec<_> = corpus.iter().map(|m| m.speaker_sample()).collect();
    let mut union: BTreeMap<String, SpeakerProfile> = BTreeMap::new();
    for mix in &corpus {
        for profile in &mix.pool {
            union.entry(profile.speaker_id.clone()).or_insert_with(|| profile.clone());
        }
    }
    let pool: Vec<SpeakerProfile> = union.into_values().collect();
    let cfg = SpkTrainConfig {
        epochs: args.train.epochs,
        peak_lr: args.train.peak_lr,
        warmup_steps: args.train.warmup_steps,
        weight_decay: args.train.weight_decay,
        max_distractors: args.max_distractors,
        seed: args.train.seed,
    };
    let losses = train_speaker_module(&mut model, &asr, &dataset, &pool, &args.mask.mask(), &cfg)?;
    save_spk(&args.out, &model)?;
    Ok(format!(
        "trained speaker module against {} profiles, loss {:.4} -> {:.4}, saved {}",
        pool.len(),
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    ))
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub asr: PathBuf,
    /// Directory for hypNNN.txt / hypNNN.jsonl outputs.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub beam: usize,
    #[arg(long, default_value_t = 3)]
    pub max_symbols_per_frame: usize,
    #[command(flatten)]
    pub mask: MaskFlags,
}

pub fn decode(args: &DecodeArgs) -> anyhow::Result<String> {
    let (spec, corpus) = load_corpus(&args.corpus)?;
    let asr = load_asr(&args.asr)?;
    let mask = args.mask.mask();
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let vocab = spec.vocab();
    let row_seconds = spec.word_duration / spec.frames_per_token as f64;
    let mut word_edits = 0;
    let mut ref_words = 0;
    let mut dropped_total = 0;
    for (i, mix) in corpus.iter().enumerate() {
        let hyp = beam_decode(
            &asr,
            &mix.features,
            &mask,
            args.beam,
            args.max_symbols_per_frame,
            &StopPolicy::none(),
        )?;
        let pairs: Vec<(usize, usize)> = hyp.tokens.iter().map(|t| (t.id, t.frame)).collect();
        let (pairs, dropped) = sanitize_markers(pairs);
        dropped_total += dropped;
        let stream = crate::pipeline::stream_from_ids(&pairs, &vocab, spec.max_overlap);
        tsot_core::io::write_stream(args.out.join(format!("hyp{i:03}.txt")), &stream)?;
        let events =
            crate::pipeline::hypothesis_events(&stream, &pairs, row_seconds, &asr.config, &spec)?;
        write_jsonl(args.out.join(format!("hyp{i:03}.jsonl")), &events)?;
        let reference: Vec<&str> = mix.events.iter().map(|e| e.token.as_str()).collect();
        let hypothesis: Vec<&str> =
            stream.entries.iter().filter(|s| !s.is_cc()).map(|s| s.as_str()).collect();
        let alignment = align(&reference, &hypothesis);
        word_edits += alignment.edits();
        ref_words += alignment.ref_len;
    }
    let latency = algorithmic_latency(&mask, row_seconds, asr.config.subsample());
    let latency_text =
        if latency.is_finite() { format!("{latency:.2} s") } else { "unbounded".to_string() };
    let mut summary = format!(
        "decoded {} streams to {}: wer {:.4}, algorithmic latency {}",
        corpus.len(),
        args.out.display(),
        word_edits as f64 / ref_words.max(1) as f64,
        latency_text
    );
    if dropped_total > 0 {
        summary.push_str(&format!(", dropped {dropped_total} stray markers"));
    }
    Ok(summary)
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Serialized stream as whitespace-separated text.
    #[arg(long)]
    pub stream: PathBuf,
    /// JSONL of per-word embeddings, markers excluded.
    #[arg(long)]
    pub tvectors: PathBuf,
    /// JSONL of enrolled profiles; identification only.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Number of speakers to cluster into; diarization only.
    #[arg(long)]
    pub oracle_speakers: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub delay_words: usize,
    #[arg(long, default_value_t = 0.98)]
    pub sd_threshold: f64,
    #[arg(long, value_enum, default_value_t = FinalizeArg::Raw)]
    pub finalize: FinalizeArg,
    #[arg(long, default_value_t = 2)]
    pub max_channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Attribution records go here as JSONL; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FinalizeArg {
    /// Raw label at the finalization token.
    Raw,
    /// Majority vote over the pending window.
    Vote,
}

impl From<FinalizeArg> for FinalizeRule {
    fn from(arg: FinalizeArg) -> FinalizeRule {
        match arg {
            FinalizeArg::Raw => FinalizeRule::RawAtFinalization,
            FinalizeArg::Vote => FinalizeRule::MajorityVote,
        }
    }
}

pub fn attribute(args: &AttributeArgs) -> anyhow::Result<String> {
    let stream = read_stream(&args.stream, args.max_channels)?;
    let tvectors: Vec<TVector> = read_jsonl(&args.tvectors)?;
    let (mode, pool) = match args.mode {
        Mode::Sid => {
            let path = args
                .profiles
                .as_ref()
                .context("identification requires --profiles")?;
            let pool: Vec<SpeakerProfile> = read_jsonl(path)?;
            (AttributionMode::Sid, pool)
        }
        Mode::Sd => {
            let k = args
                .oracle_speakers
                .context("diarization requires --oracle-speakers")?;
            (AttributionMode::Sd { oracle_speakers: k }, Vec::new())
        }
    };
    let config = AttribConfig {
        delay_words: args.delay_words,
        sd_threshold: args.sd_threshold,
        finalize: args.finalize.into(),
        seed: args.seed,
        max_binarize_neighbors: AttribConfig::default().max_binarize_neighbors,
    };
    let outcome = attribute_stream(&stream, &tvectors, mode, &pool, &config)?;
    let summary = format!(
        "attributed {} words across {} changes",
        outcome.tokens.len(),
        outcome.changes.len()
    );
    match &args.out {
        Some(path) => {
            write_jsonl(path, &outcome.tokens)?;
            Ok(format!("{summary}, wrote {}", path.display()))
        }
        None => {
            let mut lines: Vec<String> = Vec::with_capacity(outcome.tokens.len() + 1);
            for token in &outcome.tokens {
                lines.push(serde_json::to_string(token)?);
            }
            eprintln!("{summary}");
            Ok(lines.join("\n"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Metric {
    Wer,
    Sawer,
    Cpwer,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub metric: Metric,
    /// Reference transcript as JSONL word events.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Hypothesis transcript as JSONL word events.
    #[arg(long)]
    pub hyp: PathBuf,
}

pub fn eval(args: &EvalArgs) -> anyhow::Result<serde_json::Value> {
    let reference: Vec<TokenEvent> = read_jsonl(&args.reference)?;
    let hypothesis: Vec<TokenEvent> = read_jsonl(&args.hyp)?;
    let value = match args.metric {
        Metric::Wer => {
            let r: Vec<&str> = reference.iter().map(|e| e.token.as_str()).collect();
            let h: Vec<&str> = hypothesis.iter().map(|e| e.token.as_str()).collect();
            let a = align(&r, &h);
            serde_json::json!({
                "metric": "wer",
                "rate": a.wer(),
                "substitutions": a.substitutions,
                "deletions": a.deletions,
                "insertions": a.insertions,
                "ref_words": a.ref_len,
            })
        }
        Metric::Sawer => {
            let r: Vec<AttributedToken> = reference
                .iter()
                .map(|e| AttributedToken::new(e.token.clone(), e.speaker.clone()))
                .collect();
            let h: Vec<AttributedToken> = hypothesis
                .iter()
                .map(|e| AttributedToken::new(e.token.clone(), e.speaker.clone()))
                .collect();
            let rates = sawer(&r, &h);
            serde_json::json!({
                "metric": "sawer",
                "rate": rates.sawer,
                "speaker_error_rate": rates.ser,
                "word_errors": rates.alignment.edits(),
                "speaker_errors": rates.speaker_errors,
                "ref_words": rates.alignment.ref_len,
            })
        }
        Metric::Cpwer => {
            let r = group_events(&reference);
            let h = group_events(&hypothesis);
            let result = cpwer(&r, &h);
            serde_json::json!({
                "metric": "cpwer",
                "rate": result.rate,
                "edits": result.edits,
                "ref_words": result.ref_words,
                "pairing": result.pairing,
            })
        }
    };
    Ok(value)
}

fn group_events(events: &[TokenEvent]) -> Vec<tsot_core::metrics::SpeakerTranscript> {
    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for event in events {
        if !grouped.contains_key(&event.speaker) {
            order.push(event.speaker.clone());
        }
        grouped.entry(event.speaker.clone()).or_default().push(event.token.clone());
    }
    order
        .into_iter()
        .map(|speaker| {
            let tokens = grouped.remove(&speaker).unwrap_or_default();
            tsot_core::metrics::SpeakerTranscript { speaker, tokens }
        })
        .collect()
}

/// Renders an `eval` report as aligned key/value text.
pub fn render_eval(value: &serde_json::Value) -> String {
    let mut lines = Vec::new();
    if let Some(map) = value.as_object() {
        for (key, v) in map {
            match v.as_f64() {
                Some(f) if v.is_f64() => lines.push(format!("{key}: {f:.4}")),
                _ => lines.push(format!("{key}: {v}")),
            }
        }
    }
    lines.join("\n")
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `out_dir` from the file.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Overrides `seed` from the file.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: &RunArgs, json: bool) -> anyhow::Result<String> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(dir) = &args.out_dir {
        config.out_dir = dir.clone();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let report = run_pipeline(&config)?;
    if json {
        Ok(serde_json::to_string_pretty(&report)?)
    } else {
        Ok(render_report(&report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouping_preserves_first_appearance_order() {
        let events = vec![
            TokenEvent {
                token: "a".into(),
                speaker: "s2".into(),
                start: 0.0,
                duration: 1.0,
                channel: None,
            },
            TokenEvent {
                token: "b".into(),
                speaker: "s1".into(),
                start: 1.0,
                duration: 1.0,
                channel: None,
            },
            TokenEvent {
                token: "c".into(),
                speaker: "s2".into(),
                start: 2.0,
                duration: 1.0,
                channel: None,
            },
        ];
        let grouped = group_events(&events);
        assert_eq!(grouped[0].speaker, "s2");
        assert_eq!(grouped[0].tokens, vec!["a", "c"]);
        assert_eq!(grouped[1].speaker, "s1");
    }

    #[test]
    fn finalize_flag_maps_onto_both_rules() {
        assert_eq!(FinalizeRule::from(FinalizeArg::Raw), FinalizeRule::RawAtFinalization);
        assert_eq!(FinalizeRule::from(FinalizeArg::Vote), FinalizeRule::MajorityVote);
    }
}
