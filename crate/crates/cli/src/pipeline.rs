//! The end-to-end pipeline: simulate, train, decode, attribute, evaluate,
//! with every stage's artifacts persisted under the run directory.

use std::collections::BTreeMap;
use std::fs;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use tsot_core::asr::{
    algorithmic_latency, beam_decode, train_asr, viterbi_align, AsrConfig, AsrModel, StopPolicy,
    TrainConfig, CC_ID,
};
use tsot_core::attrib::{
    attribute_stream, delay_latency_seconds, AttribConfig, AttributionMode, AttributionOutcome,
};
use tsot_core::io::{save_asr, save_corpus, save_spk, write_json, write_jsonl};
use tsot_core::kernel::MaskSpec;
use tsot_core::metrics::{align, cpwer, sawer, AttributedToken, SpeakerTranscript};
use tsot_core::serial::{Symbol, SerializedStream, TokenEvent};
use tsot_core::sim::{derive_seed, generate_corpus, run_delay_sweep, DelayRow, SweepMode};
use tsot_core::speaker::{
    stream_tvectors, train_speaker_module, SpeakerProfile, SpkConfig, SpkModel, SpkTrainConfig,
    TVector,
};

use crate::config::{Mode, RunConfig};

/// A stage aborted; artifacts written before the failure stay on disk.
#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {source:#}")]
pub struct StageFailure {
    pub stage: &'static str,
    #[source]
    pub source: anyhow::Error,
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> anyhow::Result<T>) -> Result<T, StageFailure> {
    f().map_err(|source| StageFailure { stage: name, source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    /// Attention chunk in encoder frames; absent means unbounded.
    pub chunk_frames: Option<usize>,
    /// Worst-case encoder look-ahead; absent when attention is unbounded.
    pub algorithmic_seconds: Option<f64>,
    pub attribution_delay_words: usize,
    /// Mean duration of `delay_words` corpus words.
    pub attribution_delay_seconds: f64,
}

/// Final metric report. Identification runs carry SAWER/SER and, when the
/// attribution stream is the ground-truth target, plain token accuracy;
/// diarization runs carry cpWER and cluster purity instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub seed: u64,
    pub mode: Mode,
    pub oracle_transcript: bool,
    pub oracle_embeddings: bool,
    pub train_mixtures: usize,
    pub eval_mixtures: usize,
    pub asr_final_loss: Option<f64>,
    pub spk_final_loss: Option<f64>,
    pub wer: f64,
    pub ser: Option<f64>,
    pub sawer: Option<f64>,
    pub cpwer: Option<f64>,
    pub sid_accuracy: Option<f64>,
    pub sd_purity: Option<f64>,
    pub latency: LatencyReport,
    pub sweep: Option<Vec<DelayRow>>,
}

struct Decoded {
    stream: SerializedStream,
    /// Token id and emission frame per entry, markers included. Empty when
    /// embeddings are oracle and no extraction will run.
    frames: Vec<(usize, usize)>,
}

/// Drops markers a deserializer could not act on: leading, trailing, and
/// doubled ones. Imperfect recognizers do emit such streams.
pub(crate) fn sanitize_markers(pairs: Vec<(usize, usize)>) -> (Vec<(usize, usize)>, usize) {
    let mut kept: Vec<(usize, usize)> = Vec::with_capacity(pairs.len());
    let mut dropped = 0;
    for (id, frame) in pairs {
        if id == CC_ID && kept.last().map_or(true, |&(prev, _)| prev == CC_ID) {
            dropped += 1;
            continue;
        }
        kept.push((id, frame));
    }
    while kept.last().map_or(false, |&(id, _)| id == CC_ID) {
        kept.pop();
        dropped += 1;
    }
    (kept, dropped)
}

/// Builds a serialized stream from sanitized (token id, frame) pairs.
pub(crate) fn stream_from_ids(
    pairs: &[(usize, usize)],
    vocab: &tsot_core::asr::Vocab,
    max_channels: usize,
) -> SerializedStream {
    let entries = pairs
        .iter()
        .map(|&(id, _)| {
            if id == CC_ID {
                Symbol::ChannelChange
            } else {
                Symbol::Token(vocab.symbol(id).to_string())
            }
        })
        .collect();
    SerializedStream { entries, max_channels }
}

/// Word events for a hypothesis stream. Start times come from emission
/// frames when available and fall back to the word grid otherwise.
pub(crate) fn hypothesis_events(
    stream: &SerializedStream,
    frames: &[(usize, usize)],
    row_seconds: f64,
    asr_config: &AsrConfig,
    spec: &tsot_core::sim::MixtureSpec,
) -> anyhow::Result<Vec<TokenEvent>> {
    let channels = tsot_core::serial::channel_assignment(stream)?;
    let subsample = asr_config.subsample() as f64;
    let word_frames: Vec<usize> =
        frames.iter().filter(|&&(id, _)| id != CC_ID).map(|&(_, frame)| frame).collect();
    Ok(stream
        .entries
        .iter()
        .zip(&channels)
        .filter(|(entry, _)| !entry.is_cc())
        .enumerate()
        .map(|(g, (entry, channel))| TokenEvent {
            token: entry.as_str().to_string(),
            speaker: String::new(),
            start: word_frames
                .get(g)
                .map_or(g as f64 * spec.word_duration, |&frame| {
                    frame as f64 * subsample * row_seconds
                }),
            duration: spec.word_duration,
            channel: *channel,
        })
        .collect())
}

fn mask_of(config: &RunConfig) -> MaskSpec {
    match config.model.chunk_frames {
        Some(chunk) => MaskSpec::chunked(chunk, config.model.left_chunks),
        None => MaskSpec::unbounded(),
    }
}

fn attrib_config(config: &RunConfig) -> AttribConfig {
    AttribConfig {
        delay_words: config.attribution.delay_words,
        sd_threshold: config.attribution.sd_threshold,
        finalize: config.attribution.finalize,
        seed: config.seed,
        max_binarize_neighbors: config.attribution.max_binarize_neighbors,
    }
}

/// Groups attributed words into per-speaker transcripts, speakers in first-
/// appearance order.
fn by_speaker<'a>(pairs: impl Iterator<Item = (&'a str, &'a str)>) -> Vec<SpeakerTranscript> {
    let mut order: Vec<String> = Vec::new();
    let mut tokens: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (speaker, token) in pairs {
        if !tokens.contains_key(speaker) {
            order.push(speaker.to_string());
        }
        tokens.entry(speaker.to_string()).or_default().push(token.to_string());
    }
    order
        .into_iter()
        .map(|speaker| {
            let toks = tokens.remove(&speaker).unwrap_or_default();
            SpeakerTranscript { speaker, tokens: toks }
        })
        .collect()
}

pub fn run_pipeline(config: &RunConfig) -> Result<RunReport, StageFailure> {
    let out = config.out_dir.clone();
    let mask = mask_of(config);
    let spec = &config.corpus.spec;
    let attrib_cfg = attrib_config(config);
    let skip_all_training = config.oracle_transcript && config.oracle_embeddings;

    stage("setup", || {
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        write_json(
            out.join("manifest.json"),
            &serde_json::json!({
                "version": env!("CARGO_PKG_VERSION"),
                "config": config,
            }),
        )?;
        Ok(())
    })?;

    let (train_corpus, eval_corpus) = stage("simulate", || {
        let mut train_spec = spec.clone();
        train_spec.seed = derive_seed(config.seed, 0);
        let mut eval_spec = spec.clone();
        eval_spec.seed = derive_seed(config.seed, 1);
        let train = if skip_all_training {
            Vec::new()
        } else {
            generate_corpus(&train_spec, config.corpus.train_count)?
        };
        let eval = generate_corpus(&eval_spec, config.corpus.eval_count)?;
        save_corpus(out.join("corpus_train"), &train_spec, &train)?;
        save_corpus(out.join("corpus_eval"), &eval_spec, &eval)?;
        eprintln!("simulate: {} train + {} eval mixtures", train.len(), eval.len());
        Ok((train, eval))
    })?;

    let asr_config = AsrConfig::toy(spec.feat_dim(), spec.vocab().size());
    let mut asr_final_loss = None;
    let asr = if skip_all_training {
        None
    } else {
        Some(stage("asr-train", || {
            let mut model = AsrModel::new(asr_config.clone(), derive_seed(config.seed, 2));
            let samples: Vec<_> = train_corpus.iter().map(|m| m.asr_sample()).collect();
            let cfg = TrainConfig {
                epochs: config.asr_train.epochs,
                peak_lr: config.asr_train.peak_lr,
                warmup_steps: config.asr_train.warmup_steps,
                weight_decay: config.asr_train.weight_decay,
                seed: derive_seed(config.seed, 3),
            };
            let losses = train_asr(&mut model, &samples, &mask, &cfg)?;
            asr_final_loss = losses.last().copied();
            save_asr(out.join("asr.ckpt"), &model)?;
            eprintln!(
                "asr-train: {} epochs, loss {:.4} -> {:.4}",
                losses.len(),
                losses.first().copied().unwrap_or(f64::NAN),
                losses.last().copied().unwrap_or(f64::NAN),
            );
            Ok(model)
        })?)
    };

    let mut spk_final_loss = None;
    let spk = if config.oracle_embeddings {
        None
    } else {
        Some(stage("spk-train", || {
            let asr = asr.as_ref().expect("speaker training requires a recognizer");
            let mut model = SpkModel::new(
                SpkConfig::paired(&asr.config, spec.dvec_dim),
                derive_seed(config.seed, 4),
            );
            let dataset: Vec<_> = train_corpus.iter().map(|m| m.speaker_sample()).collect();
            let mut union: BTreeMap<String, SpeakerProfile> = BTreeMap::new();
            for mix in &train_corpus {
                for profile in &mix.pool {
                    union.entry(profile.speaker_id.clone()).or_insert_with(|| profile.clone());
                }
            }
            let pool: Vec<SpeakerProfile> = union.into_values().collect();
            let cfg = SpkTrainConfig {
                epochs: config.spk_train.epochs,
                peak_lr: config.spk_train.peak_lr,
                warmup_steps: config.spk_train.warmup_steps,
                weight_decay: config.spk_train.weight_decay,
                max_distractors: config.spk_train.max_distractors,
                seed: derive_seed(config.seed, 5),
            };
            let losses = train_speaker_module(&mut model, asr, &dataset, &pool, &mask, &cfg)?;
            spk_final_loss = losses.last().copied();
            save_spk(out.join("spk.ckpt"), &model)?;
            eprintln!(
                "spk-train: {} epochs over {} profiles, loss {:.4} -> {:.4}",
                losses.len(),
                pool.len(),
                losses.first().copied().unwrap_or(f64::NAN),
                losses.last().copied().unwrap_or(f64::NAN),
            );
            Ok(model)
        })?)
    };

    let decoded: Vec<Decoded> = stage("decode", || {
        let hyp_dir = out.join("hyp");
        fs::create_dir_all(&hyp_dir).with_context(|| format!("creating {}", hyp_dir.display()))?;
        let vocab = spec.vocab();
        let row_seconds = spec.word_duration / spec.frames_per_token as f64;
        let mut result = Vec::with_capacity(eval_corpus.len());
        let mut dropped_total = 0;
        for (i, mix) in eval_corpus.iter().enumerate() {
            let dec = if config.oracle_transcript {
                let frames = if config.oracle_embeddings {
                    Vec::new()
                } else {
                    let asr = asr.as_ref().expect("alignment requires a recognizer");
                    let aligned = viterbi_align(asr, &mix.features, &mix.target_ids, &mask)?;
                    mix.target_ids.iter().copied().zip(aligned).collect()
                };
                Decoded { stream: mix.target.clone(), frames }
            } else {
                let asr = asr.as_ref().expect("decoding requires a recognizer");
                let hyp = beam_decode(
                    asr,
                    &mix.features,
                    &mask,
                    config.model.beam,
                    config.model.max_symbols_per_frame,
                    &StopPolicy::none(),
                )?;
                let pairs: Vec<(usize, usize)> =
                    hyp.tokens.iter().map(|t| (t.id, t.frame)).collect();
                let (pairs, dropped) = sanitize_markers(pairs);
                dropped_total += dropped;
                let stream = stream_from_ids(&pairs, &vocab, spec.max_overlap);
                Decoded { stream, frames: pairs }
            };
            tsot_core::io::write_stream(hyp_dir.join(format!("hyp{i:03}.txt")), &dec.stream)?;
            let events = hypothesis_events(&dec.stream, &dec.frames, row_seconds, &asr_config, spec)?;
            write_jsonl(hyp_dir.join(format!("hyp{i:03}.jsonl")), &events)?;
            result.push(dec);
        }
        if dropped_total > 0 {
            eprintln!("decode: dropped {dropped_total} undeserializable markers");
        }
        eprintln!(
            "decode: {} streams{}",
            result.len(),
            if config.oracle_transcript { " (oracle transcripts)" } else { "" },
        );
        Ok(result)
    })?;

    let outcomes: Vec<AttributionOutcome> = stage("attribute", || {
        let att_dir = out.join("attrib");
        fs::create_dir_all(&att_dir).with_context(|| format!("creating {}", att_dir.display()))?;
        let mut outcomes = Vec::with_capacity(eval_corpus.len());
        for (i, (mix, dec)) in eval_corpus.iter().zip(&decoded).enumerate() {
            let (stream, tvectors): (&SerializedStream, Vec<TVector>) =
                if config.oracle_embeddings {
                    (&mix.target, mix.oracle_tvectors.clone())
                } else {
                    let asr = asr.as_ref().expect("extraction requires a recognizer");
                    let spk = spk.as_ref().expect("extraction requires a speaker module");
                    let all = stream_tvectors(asr, spk, &mix.features, &dec.frames, &mask)?;
                    let kept = all
                        .into_iter()
                        .zip(&dec.frames)
                        .filter(|(_, &(id, _))| id != CC_ID)
                        .map(|(tv, _)| tv)
                        .collect();
                    (&dec.stream, kept)
                };
            let mode = match config.attribution.mode {
                Mode::Sid => AttributionMode::Sid,
                Mode::Sd => AttributionMode::Sd { oracle_speakers: mix.active.len() },
            };
            let outcome = attribute_stream(stream, &tvectors, mode, &mix.pool, &attrib_cfg)?;
            write_jsonl(att_dir.join(format!("att{i:03}.jsonl")), &outcome.tokens)?;
            outcomes.push(outcome);
        }
        eprintln!("attribute: {} streams", outcomes.len());
        Ok(outcomes)
    })?;

    let report = stage("evaluate", || {
        let on_target = config.oracle_embeddings || config.oracle_transcript;

        let mut word_edits = 0;
        let mut ref_words = 0;
        for (mix, dec) in eval_corpus.iter().zip(&decoded) {
            let reference: Vec<&str> = mix.events.iter().map(|e| e.token.as_str()).collect();
            let hypothesis: Vec<&str> = dec
                .stream
                .entries
                .iter()
                .filter(|s| !s.is_cc())
                .map(|s| s.as_str())
                .collect();
            let alignment = align(&reference, &hypothesis);
            word_edits += alignment.edits();
            ref_words += alignment.ref_len;
        }
        let wer = word_edits as f64 / ref_words.max(1) as f64;

        let mut ser = None;
        let mut sa = None;
        let mut cp = None;
        let mut sid_accuracy = None;
        let mut sd_purity = None;
        match config.attribution.mode {
            Mode::Sid => {
                let mut joint_errors = 0;
                let mut speaker_errors = 0;
                let mut hits = 0;
                let mut correct = 0;
                let mut total = 0;
                for (mix, outcome) in eval_corpus.iter().zip(&outcomes) {
                    let reference: Vec<AttributedToken> = mix
                        .events
                        .iter()
                        .map(|e| AttributedToken::new(e.token.clone(), e.speaker.clone()))
                        .collect();
                    let hypothesis: Vec<AttributedToken> = outcome
                        .tokens
                        .iter()
                        .map(|t| AttributedToken::new(t.token.clone(), t.speaker.clone()))
                        .collect();
                    let rates = sawer(&reference, &hypothesis);
                    joint_errors += rates.alignment.edits() + rates.speaker_errors;
                    speaker_errors += rates.speaker_errors;
                    hits += rates.alignment.hits;
                    if on_target {
                        for (t, truth) in outcome.tokens.iter().zip(&mix.speakers) {
                            if &t.speaker == truth {
                                correct += 1;
                            }
                            total += 1;
                        }
                    }
                }
                sa = Some(joint_errors as f64 / ref_words.max(1) as f64);
                ser = Some(speaker_errors as f64 / hits.max(1) as f64);
                if on_target {
                    sid_accuracy = Some(correct as f64 / total.max(1) as f64);
                }
            }
            Mode::Sd => {
                let mut cp_edits = 0;
                let mut cp_words = 0;
                let mut pure = 0;
                let mut total = 0;
                for (mix, outcome) in eval_corpus.iter().zip(&outcomes) {
                    let reference =
                        by_speaker(mix.events.iter().map(|e| (e.speaker.as_str(), e.token.as_str())));
                    let hypothesis = by_speaker(
                        outcome.tokens.iter().map(|t| (t.speaker.as_str(), t.token.as_str())),
                    );
                    let result = cpwer(&reference, &hypothesis);
                    cp_edits += result.edits;
                    cp_words += result.ref_words;
                    if on_target {
                        let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
                        for (t, truth) in outcome.tokens.iter().zip(&mix.speakers) {
                            *counts.entry((t.speaker.as_str(), truth.as_str())).or_insert(0) += 1;
                        }
                        let clusters: std::collections::BTreeSet<&str> =
                            counts.keys().map(|(c, _)| *c).collect();
                        for cluster in clusters {
                            pure += counts
                                .iter()
                                .filter(|((c, _), _)| *c == cluster)
                                .map(|(_, n)| *n)
                                .max()
                                .unwrap_or(0);
                        }
                        total += outcome.tokens.len();
                    }
                }
                cp = Some(cp_edits as f64 / cp_words.max(1) as f64);
                if on_target {
                    sd_purity = Some(pure as f64 / total.max(1) as f64);
                }
            }
        }

        let all_events: Vec<TokenEvent> =
            eval_corpus.iter().flat_map(|m| m.events.iter().cloned()).collect();
        let row_seconds = spec.word_duration / spec.frames_per_token as f64;
        let algorithmic = config
            .model
            .chunk_frames
            .map(|_| algorithmic_latency(&mask, row_seconds, asr_config.subsample()));
        let latency = LatencyReport {
            chunk_frames: config.model.chunk_frames,
            algorithmic_seconds: algorithmic,
            attribution_delay_words: config.attribution.delay_words,
            attribution_delay_seconds: delay_latency_seconds(
                &all_events,
                config.attribution.delay_words,
            ),
        };

        let sweep = match &config.sweep_delays {
            Some(delays) => {
                let mode = match config.attribution.mode {
                    Mode::Sid => SweepMode::Sid,
                    Mode::Sd => SweepMode::Sd,
                };
                Some(run_delay_sweep(&eval_corpus, delays, mode, &attrib_cfg)?)
            }
            None => None,
        };

        let report = RunReport {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            mode: config.attribution.mode,
            oracle_transcript: config.oracle_transcript,
            oracle_embeddings: config.oracle_embeddings,
            train_mixtures: train_corpus.len(),
            eval_mixtures: eval_corpus.len(),
            asr_final_loss,
            spk_final_loss,
            wer,
            ser,
            sawer: sa,
            cpwer: cp,
            sid_accuracy,
            sd_purity,
            latency,
            sweep,
        };
        write_json(out.join("report.json"), &report)?;
        eprintln!("evaluate: report written to {}", out.join("report.json").display());
        Ok(report)
    })?;

    Ok(report)
}

/// Readable multi-line rendering for runs without `--json`.
pub fn render_report(report: &RunReport) -> String {
    let mut lines = Vec::new();
    lines.push(format!(
        "run: mode {:?}, {} eval mixtures, seed {}",
        report.mode, report.eval_mixtures, report.seed
    ));
    lines.push(format!("wer: {:.4}", report.wer));
    if let (Some(sa), Some(ser)) = (report.sawer, report.ser) {
        lines.push(format!("sawer: {sa:.4}  ser: {ser:.4}"));
    }
    if let Some(cp) = report.cpwer {
        lines.push(format!("cpwer: {cp:.4}"));
    }
    if let Some(acc) = report.sid_accuracy {
        lines.push(format!("sid accuracy: {acc:.4}"));
    }
    if let Some(p) = report.sd_purity {
        lines.push(format!("sd purity: {p:.4}"));
    }
    match report.latency.algorithmic_seconds {
        Some(s) => lines.push(format!(
            "latency: {:.2} s algorithmic + {:.2} s for {} words of delay",
            s, report.latency.attribution_delay_seconds, report.latency.attribution_delay_words
        )),
        None => lines.push(format!(
            "latency: unbounded attention + {:.2} s for {} words of delay",
            report.latency.attribution_delay_seconds, report.latency.attribution_delay_words
        )),
    }
    if let Some(sweep) = &report.sweep {
        lines.push("delay sweep (delay, error rate, missed changes):".to_string());
        for row in sweep {
            lines.push(format!(
                "  D={:<3} err {:.4}  missed {}/{}",
                row.delay_words,
                row.error_rate(),
                row.missed_changes,
                row.total_changes
            ));
        }
    }
    lines.join("\n")
}
