//! On-disk formats: JSONL record files, serialized-stream text, and model
//! checkpoints.
//!
//! JSONL files hold one JSON object per line and are used for token streams,
//! attribution records, and profile pools. A checkpoint is a flat binary file
//! of little-endian f64 values plus a JSON sidecar (same path with `.json`
//! appended) recording the model configuration and every tensor's name and
//! shape in sorted name order, which fixes the binary layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asr::{AsrConfig, AsrModel};
use crate::kernel::{Matrix, ParamSet};
use crate::serial::{SerialError, SerializedStream, TokenEvent};
use crate::sim::{Mixture, MixtureSpec};
use crate::speaker::{SpeakerProfile, SpkConfig, SpkModel, TVector};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    JsonLine {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("checkpoint holds {got} bytes but the manifest needs {want}")]
    CheckpointSize { want: usize, got: usize },
    #[error(transparent)]
    Serial(#[from] SerialError),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.to_path_buf(), source }
}

/// Reads a JSONL file into records, one per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|source| IoError::JsonLine {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Writes records as JSONL, one object per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut out = String::new();
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out).map_err(file_err(path))
}

/// Writes a value as pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(file_err(path))
}

/// Reads a single JSON value from a file.
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

/// Reads a whitespace-separated symbol file as a serialized stream.
pub fn read_stream(
    path: impl AsRef<Path>,
    max_channels: usize,
) -> Result<SerializedStream, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    Ok(SerializedStream::from_text(&text, max_channels)?)
}

/// Writes a serialized stream as plain text with the literal marker.
pub fn write_stream(path: impl AsRef<Path>, stream: &SerializedStream) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut text = stream.to_text();
    text.push('\n');
    fs::write(path, text).map_err(file_err(path))
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest<C> {
    config: C,
    tensors: Vec<TensorMeta>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".json");
    PathBuf::from(name)
}

/// Saves a parameter set and its model configuration. Tensor values go to
/// `path`; names and shapes go to the sidecar.
pub fn save_checkpoint<C: Serialize>(
    path: impl AsRef<Path>,
    config: &C,
    params: &ParamSet,
) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut tensors = Vec::with_capacity(params.len());
    let mut bytes = Vec::with_capacity(8 * params.scalar_count());
    for (name, m) in params.iter() {
        tensors.push(TensorMeta { name: name.clone(), rows: m.rows(), cols: m.cols() });
        for &v in m.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(file_err(path))?;
    let sidecar = sidecar_path(path);
    let manifest = Manifest { config, tensors };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|source| IoError::Json { path: sidecar.clone(), source })?;
    fs::write(&sidecar, text).map_err(file_err(&sidecar))
}

/// Restores a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<C: DeserializeOwned>(
    path: impl AsRef<Path>,
) -> Result<(C, ParamSet), IoError> {
    let path = path.as_ref();
    let sidecar = sidecar_path(path);
    let text = fs::read_to_string(&sidecar).map_err(file_err(&sidecar))?;
    let manifest: Manifest<C> = serde_json::from_str(&text)
        .map_err(|source| IoError::Json { path: sidecar.clone(), source })?;
    let bytes = fs::read(path).map_err(file_err(path))?;
    let want: usize = manifest.tensors.iter().map(|t| 8 * t.rows * t.cols).sum();
    if bytes.len() != want {
        return Err(IoError::CheckpointSize { want, got: bytes.len() });
    }
    let mut params = ParamSet::new();
    let mut offset = 0;
    for meta in &manifest.tensors {
        let count = meta.rows * meta.cols;
        let data: Vec<f64> = bytes[offset..offset + 8 * count]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += 8 * count;
        params.insert(meta.name.clone(), Matrix::from_vec(meta.rows, meta.cols, data));
    }
    Ok((manifest.config, params))
}

pub fn save_asr(path: impl AsRef<Path>, model: &AsrModel) -> Result<(), IoError> {
    save_checkpoint(path, &model.config, &model.params)
}

pub fn load_asr(path: impl AsRef<Path>) -> Result<AsrModel, IoError> {
    let (config, params): (AsrConfig, ParamSet) = load_checkpoint(path)?;
    Ok(AsrModel { config, params })
}

pub fn save_spk(path: impl AsRef<Path>, model: &SpkModel) -> Result<(), IoError> {
    save_checkpoint(path, &model.config, &model.params)
}

pub fn load_spk(path: impl AsRef<Path>) -> Result<SpkModel, IoError> {
    let (config, params): (SpkConfig, ParamSet) = load_checkpoint(path)?;
    Ok(SpkModel { config, params })
}

/// Corpus directory index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub spec: MixtureSpec,
    pub count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct MixMeta {
    frames: usize,
    feat_dim: usize,
    max_channels: usize,
    active: Vec<String>,
    target_ids: Vec<usize>,
}

fn write_matrix(path: &Path, m: &Matrix) -> Result<(), IoError> {
    let mut bytes = Vec::with_capacity(8 * m.data().len());
    for &v in m.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(file_err(path))
}

fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<Matrix, IoError> {
    let bytes = fs::read(path).map_err(file_err(path))?;
    let want = 8 * rows * cols;
    if bytes.len() != want {
        return Err(IoError::CheckpointSize { want, got: bytes.len() });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Matrix::from_vec(rows, cols, data))
}

fn mix_dir(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("mix{index:03}"))
}

/// Writes a corpus as one subdirectory per mixture: token events and the
/// profile pool as JSONL, the serialized target as text, features as flat
/// binary, and a meta record tying them together.
pub fn save_corpus(
    dir: impl AsRef<Path>,
    spec: &MixtureSpec,
    corpus: &[Mixture],
) -> Result<(), IoError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(file_err(dir))?;
    write_json(
        &dir.join("manifest.json"),
        &CorpusManifest { spec: spec.clone(), count: corpus.len() },
    )?;
    for (i, mix) in corpus.iter().enumerate() {
        let sub = mix_dir(dir, i);
        fs::create_dir_all(&sub).map_err(file_err(&sub))?;
        write_jsonl(sub.join("events.jsonl"), &mix.events)?;
        write_stream(sub.join("target.txt"), &mix.target)?;
        write_matrix(&sub.join("features.bin"), &mix.features)?;
        write_jsonl(sub.join("tvectors.jsonl"), &mix.oracle_tvectors)?;
        write_jsonl(sub.join("pool.jsonl"), &mix.pool)?;
        write_json(
            &sub.join("meta.json"),
            &MixMeta {
                frames: mix.features.rows(),
                feat_dim: mix.features.cols(),
                max_channels: mix.target.max_channels,
                active: mix.active.clone(),
                target_ids: mix.target_ids.clone(),
            },
        )?;
    }
    Ok(())
}

/// Reads a corpus directory written by [`save_corpus`]. Per-token speaker
/// labels are recovered from the event records.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<(MixtureSpec, Vec<Mixture>), IoError> {
    let dir = dir.as_ref();
    let manifest: CorpusManifest = read_json(&dir.join("manifest.json"))?;
    let mut corpus = Vec::with_capacity(manifest.count);
    for i in 0..manifest.count {
        let sub = mix_dir(dir, i);
        let meta: MixMeta = read_json(&sub.join("meta.json"))?;
        let events: Vec<TokenEvent> = read_jsonl(sub.join("events.jsonl"))?;
        let target = read_stream(sub.join("target.txt"), meta.max_channels)?;
        let features = read_matrix(&sub.join("features.bin"), meta.frames, meta.feat_dim)?;
        let oracle_tvectors: Vec<TVector> = read_jsonl(sub.join("tvectors.jsonl"))?;
        let pool: Vec<SpeakerProfile> = read_jsonl(sub.join("pool.jsonl"))?;
        let speakers = events.iter().map(|e| e.speaker.clone()).collect();
        corpus.push(Mixture {
            features,
            events,
            target,
            speakers,
            oracle_tvectors,
            pool,
            active: meta.active,
            target_ids: meta.target_ids,
        });
    }
    Ok((manifest.spec, corpus))
}
