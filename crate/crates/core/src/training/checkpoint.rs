//! Checkpoint directories.
//!
//! A transfer checkpoint holds `manifest.json`, one `<parameter>.bin` per
//! parameter matrix (row-major little-endian `f32`), `best.<parameter>.bin`
//! for the best dev snapshot when there is one, `optimizer.bin` (the Adam
//! step and moments as little-endian `f64`) and `vocab.txt`. Classifier
//! checkpoints use the same blob layout without optimizer state.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::OptimizerState;
use super::{BestSnapshot, DevMetrics, Regime, TrainState};
use crate::corpus::{StyleSet, Vocabulary};
use crate::error::{Error, Result};
use crate::nets::{ClassifierArch, ModelConfig, Parameters, StyleClassifier, TransferModel};

const MODEL_FORMAT: &str = "dastkit-transfer-1";
const CLASSIFIER_FORMAT: &str = "dastkit-classifier-1";
const MANIFEST: &str = "manifest.json";
const VOCAB: &str = "vocab.txt";
const OPTIMIZER: &str = "optimizer.bin";

/// One parameter blob.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestMeta {
    pub step: u64,
    pub metrics: DevMetrics,
    pub parameters: Vec<BlobEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format: String,
    pub regime: String,
    /// style names in index order
    pub styles: Vec<String>,
    pub model_config: ModelConfig,
    pub vocab_hash: String,
    pub vocab_size: usize,
    pub step: u64,
    /// training configuration exactly as given
    pub train_config: serde_json::Value,
    pub parameters: Vec<BlobEntry>,
    pub best: Option<BestMeta>,
    pub optimizer: Option<String>,
    pub running: BTreeMap<String, f64>,
    pub stalls: usize,
    pub checkpoint_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierManifest {
    pub format: String,
    /// what the classifier is for, e.g. `style-target` or `domain`
    pub role: String,
    pub arch: ClassifierArch,
    pub labels: Vec<String>,
    pub vocab_hash: String,
    pub vocab_size: usize,
    pub frozen: bool,
    pub dev_accuracy: f64,
    pub parameters: Vec<BlobEntry>,
    pub checkpoint_id: String,
}

/// Short SHA-256 digest of every parameter's `f32` bytes.
pub fn param_digest(params: &Parameters) -> String {
    let mut h = Sha256::new();
    for (name, m) in params.iter() {
        h.update(name.as_bytes());
        h.update(Parameters::matrix_to_le_bytes(m));
    }
    hex::encode(h.finalize())[..16].to_string()
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_params(dir: &Path, prefix: &str, params: &Parameters) -> Result<Vec<BlobEntry>> {
    params
        .iter()
        .map(|(name, m)| {
            let file = format!("{prefix}{name}.bin");
            write(&dir.join(&file), Parameters::matrix_to_le_bytes(m))?;
            Ok(BlobEntry {
                name: name.to_string(),
                file,
                rows: m.nrows(),
                cols: m.ncols(),
            })
        })
        .collect()
}

fn read_params(dir: &Path, entries: &[BlobEntry]) -> Result<Parameters> {
    let mut params = Parameters::new();
    for e in entries {
        let bytes = read(&dir.join(&e.file))?;
        params.push(e.name.clone(), Parameters::matrix_from_le_bytes(&bytes, e.rows, e.cols)?);
    }
    Ok(params)
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_manifest<T: Serialize>(dir: &Path, manifest: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)?;
    write(&dir.join(MANIFEST), json + "\n")
}

fn read_manifest<T: for<'de> Deserialize<'de>>(dir: &Path) -> Result<T> {
    let path = dir.join(MANIFEST);
    let bytes = read(&path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::IncompatibleCheckpoint(format!("{}: {e}", path.display())))
}

/// The checkpoint's own vocabulary, checked against `expected` when given.
fn checked_vocab(dir: &Path, hash: &str, expected: Option<&Vocabulary>) -> Result<Vocabulary> {
    let stored = Vocabulary::load(&dir.join(VOCAB))?;
    if stored.hash() != hash {
        return Err(Error::IncompatibleCheckpoint(
            "stored vocabulary does not match the manifest hash".into(),
        ));
    }
    if let Some(v) = expected {
        if v.hash() != hash {
            return Err(Error::IncompatibleCheckpoint(format!(
                "checkpoint was trained with vocabulary {hash}, not {}",
                v.hash()
            )));
        }
    }
    Ok(stored)
}

/// Writes the full training state to `dir`.
pub fn save_checkpoint(
    state: &TrainState,
    vocab: &Vocabulary,
    styles: &StyleSet,
    train_config: &serde_json::Value,
    dir: &Path,
) -> Result<()> {
    prepare_dir(dir)?;
    let parameters = write_params(dir, "", state.model.params())?;
    let best = match &state.best {
        Some(b) => Some(BestMeta {
            step: b.step,
            metrics: b.metrics,
            parameters: write_params(dir, "best.", &b.params)?,
        }),
        None => None,
    };
    write(&dir.join(OPTIMIZER), state.optimizer.to_le_bytes())?;
    vocab.save(&dir.join(VOCAB))?;
    let manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        regime: state.regime.to_string(),
        styles: styles.names().to_vec(),
        model_config: state.model.config().clone(),
        vocab_hash: vocab.hash(),
        vocab_size: vocab.len(),
        step: state.step,
        train_config: train_config.clone(),
        parameters,
        best,
        optimizer: Some(OPTIMIZER.into()),
        running: state.running.clone(),
        stalls: state.stalls,
        checkpoint_id: param_digest(state.model.params()),
    };
    write_manifest(dir, &manifest)
}

/// Reads a checkpoint written by [`save_checkpoint`], refusing it when it
/// was built over a different vocabulary.
pub fn load_checkpoint(dir: &Path, vocab: &Vocabulary) -> Result<(TrainState, ModelManifest)> {
    let manifest: ModelManifest = read_manifest(dir)?;
    check_format(&manifest.format, MODEL_FORMAT)?;
    checked_vocab(dir, &manifest.vocab_hash, Some(vocab))?;
    let params = read_params(dir, &manifest.parameters)?;
    let model = TransferModel::from_parameters(manifest.model_config.clone(), params)?;
    let optimizer = match &manifest.optimizer {
        Some(file) => OptimizerState::from_le_bytes(&read(&dir.join(file))?, model.params())?,
        None => OptimizerState::new(model.params()),
    };
    let best = match &manifest.best {
        Some(b) => Some(BestSnapshot {
            step: b.step,
            metrics: b.metrics,
            params: read_params(dir, &b.parameters)?,
        }),
        None => None,
    };
    let regime: Regime = manifest.regime.parse()?;
    let state = TrainState {
        step: manifest.step,
        regime,
        model,
        optimizer,
        best,
        running: manifest.running.clone(),
        stalls: manifest.stalls,
    };
    Ok((state, manifest))
}

/// Writes a model without optimizer state.
pub fn save_model(
    model: &TransferModel,
    vocab: &Vocabulary,
    styles: &StyleSet,
    regime: Regime,
    train_config: &serde_json::Value,
    dir: &Path,
) -> Result<()> {
    prepare_dir(dir)?;
    let parameters = write_params(dir, "", model.params())?;
    vocab.save(&dir.join(VOCAB))?;
    let manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        regime: regime.to_string(),
        styles: styles.names().to_vec(),
        model_config: model.config().clone(),
        vocab_hash: vocab.hash(),
        vocab_size: vocab.len(),
        step: 0,
        train_config: train_config.clone(),
        parameters,
        best: None,
        optimizer: None,
        running: BTreeMap::new(),
        stalls: 0,
        checkpoint_id: param_digest(model.params()),
    };
    write_manifest(dir, &manifest)
}

/// The model for inference: the best dev snapshot when the checkpoint has
/// one, its current parameters otherwise. Returns the checkpoint's
/// vocabulary alongside.
pub fn load_model(
    dir: &Path,
    vocab: Option<&Vocabulary>,
) -> Result<(TransferModel, Vocabulary, ModelManifest)> {
    let manifest: ModelManifest = read_manifest(dir)?;
    check_format(&manifest.format, MODEL_FORMAT)?;
    let stored = checked_vocab(dir, &manifest.vocab_hash, vocab)?;
    let entries = manifest
        .best
        .as_ref()
        .map_or(&manifest.parameters, |b| &b.parameters);
    let params = read_params(dir, entries)?;
    let model = TransferModel::from_parameters(manifest.model_config.clone(), params)?;
    Ok((model, stored, manifest))
}

pub fn save_classifier(
    classifier: &StyleClassifier,
    vocab: &Vocabulary,
    role: &str,
    dev_accuracy: f64,
    dir: &Path,
) -> Result<()> {
    prepare_dir(dir)?;
    let parameters = write_params(dir, "", classifier.params())?;
    vocab.save(&dir.join(VOCAB))?;
    let manifest = ClassifierManifest {
        format: CLASSIFIER_FORMAT.into(),
        role: role.into(),
        arch: classifier.arch().clone(),
        labels: classifier.labels().to_vec(),
        vocab_hash: vocab.hash(),
        vocab_size: vocab.len(),
        frozen: classifier.is_frozen(),
        dev_accuracy,
        parameters,
        checkpoint_id: param_digest(classifier.params()),
    };
    write_manifest(dir, &manifest)
}

pub fn load_classifier(
    dir: &Path,
    vocab: Option<&Vocabulary>,
) -> Result<(StyleClassifier, ClassifierManifest)> {
    let manifest: ClassifierManifest = read_manifest(dir)?;
    check_format(&manifest.format, CLASSIFIER_FORMAT)?;
    checked_vocab(dir, &manifest.vocab_hash, vocab)?;
    let params = read_params(dir, &manifest.parameters)?;
    let classifier = StyleClassifier::from_parameters(
        manifest.arch.clone(),
        manifest.labels.clone(),
        params,
        manifest.frozen,
    )?;
    Ok((classifier, manifest))
}

fn check_format(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::IncompatibleCheckpoint(format!(
            "expected a `{expected}` checkpoint, found `{found}`"
        )));
    }
    Ok(())
}
