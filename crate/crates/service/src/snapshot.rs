//! On-disk session snapshots: a JSON document plus a model checkpoint.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use cvil_core::classifier::ClassifierModel;
use cvil_core::workflow::LogEntry;
use cvil_core::{Dataset, LabelStore, SessionState, TrainConfig};

use crate::ServiceError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub schema_version: u32,
    pub session_id: String,
    /// Content hash of the dataset the session was labeling.
    pub fingerprint: String,
    pub seed: u64,
    pub state: SessionState,
    pub labels: LabelStore,
    pub log: Vec<LogEntry>,
    /// Checkpoint file name, relative to the snapshot.
    pub model: String,
    pub model_init_seed: u64,
    pub model_epoch_counter: u64,
    pub trained: bool,
    pub train_config: TrainConfig,
}

/// SHA-256 over shape, class names, embeddings, truth and asset paths.
pub fn fingerprint(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(b"cvil-dataset\0");
    for v in [dataset.len(), dataset.dim(), dataset.class_count()] {
        h.update((v as u64).to_le_bytes());
    }
    for name in dataset.class_names() {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
    }
    for v in dataset.embeddings_flat() {
        h.update(v.to_le_bytes());
    }
    for id in dataset.ids() {
        h.update(dataset.truth(id).map_or(u64::MAX, |c| c as u64).to_le_bytes());
        match dataset.image_path(id) {
            Some(p) => {
                h.update((p.len() as u64).to_le_bytes());
                h.update(p.as_bytes());
            }
            None => h.update(u64::MAX.to_le_bytes()),
        }
    }
    hex::encode(h.finalize())
}

pub fn model_path(snapshot: &Path) -> PathBuf {
    let mut name = snapshot.file_name().unwrap_or_default().to_os_string();
    name.push(".model");
    snapshot.with_file_name(name)
}

/// Writes `snapshot` to `path` and `model` next to it.
pub fn write(path: &Path, snapshot: &SessionSnapshot, model: &ClassifierModel) -> Result<PathBuf, ServiceError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let model_file = model_path(path);
    model.write_checkpoint(BufWriter::new(fs::File::create(&model_file)?))?;
    serde_json::to_writer_pretty(BufWriter::new(fs::File::create(path)?), snapshot)?;
    Ok(model_file)
}

/// Reads a snapshot and its checkpoint, checking the schema version first.
pub fn read(path: &Path) -> Result<(SessionSnapshot, ClassifierModel), ServiceError> {
    let bytes = fs::read(path)?;
    let raw: serde_json::Value = serde_json::from_slice(&bytes)?;
    let found = raw
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| ServiceError::CorruptSnapshot("missing schema_version".into()))?;
    if found != u64::from(SCHEMA_VERSION) {
        return Err(ServiceError::VersionMismatch {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: SCHEMA_VERSION,
        });
    }
    let snapshot: SessionSnapshot = serde_json::from_value(raw)?;
    let model_file = path.with_file_name(&snapshot.model);
    let mut model = ClassifierModel::read_checkpoint(fs::File::open(&model_file)?)?;
    model.init_seed = snapshot.model_init_seed;
    model.epoch_counter = snapshot.model_epoch_counter;
    Ok((snapshot, model))
}
