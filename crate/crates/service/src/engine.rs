use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use cvil_core::measures::{self, class_stats, MeasureContext, MeasureKind};
use cvil_core::workflow::{self, Action, ActionOutcome, Direction, FocusSubset, LabelStatus};
use cvil_core::{ClassId, ClassifierModel, Dataset, InstanceId, Phase, ProbMatrix, Session, TrainConfig};

use crate::snapshot::{self, SessionSnapshot, SCHEMA_VERSION};
use crate::ServiceError;

/// A class given either by index or by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassRef {
    Index(ClassId),
    Name(String),
}

impl From<ClassId> for ClassRef {
    fn from(c: ClassId) -> Self {
        Self::Index(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub class: ClassId,
    pub name: String,
    pub manual: usize,
    pub batch: usize,
    /// Unlabeled instances predicted as this class; absent before training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_unlabeled: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TrainingState {
    Idle,
    Training { epoch: usize, epochs: usize, loss: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub session_id: String,
    pub fingerprint: String,
    pub phase: Phase,
    pub n: usize,
    pub m: usize,
    pub classes: Vec<ClassCounts>,
    pub labeled: usize,
    pub log_len: usize,
    pub focus_class: Option<ClassId>,
    pub cutoff: usize,
    pub selection: Vec<InstanceId>,
    pub excluded: Vec<InstanceId>,
    pub trained: bool,
    pub model_epochs: u64,
    pub training: TrainingState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationResponse {
    #[serde(flatten)]
    pub outcome: ActionOutcome,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Unlabeled,
    Batch,
    Manual,
    OtherCutoff,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub id: InstanceId,
    pub x: f64,
    pub y: f64,
    pub status: PointStatus,
}

type CacheKey = (u64, usize, u64);

#[derive(Debug, Default)]
struct ViewCache {
    key: Option<CacheKey>,
    entries: HashMap<String, Value>,
}

impl ViewCache {
    fn get(&mut self, key: CacheKey, name: &str) -> Option<Value> {
        if self.key != Some(key) {
            self.key = Some(key);
            self.entries.clear();
            return None;
        }
        self.entries.get(name).cloned()
    }

    fn put(&mut self, key: CacheKey, name: String, value: Value) {
        if self.key != Some(key) {
            self.key = Some(key);
            self.entries.clear();
        }
        self.entries.insert(name, value);
    }
}

/// Everything one labeling session owns.
pub struct Engine {
    pub(crate) dataset: Arc<Dataset>,
    fingerprint: String,
    session_id: String,
    pub(crate) session: Session,
    pub(crate) model: ClassifierModel,
    pub(crate) probs: Option<Arc<ProbMatrix>>,
    pub(crate) trained: bool,
    pub(crate) train_config: TrainConfig,
    seed: u64,
    generation: u64,
    cache: Mutex<ViewCache>,
}

fn new_session_id(fingerprint: &str) -> String {
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    format!("{}-{nanos:x}", &fingerprint[..12])
}

impl Engine {
    pub fn new(dataset: Dataset, seed: u64, train_config: TrainConfig) -> Result<Self, ServiceError> {
        let fingerprint = snapshot::fingerprint(&dataset);
        let model = ClassifierModel::new(dataset.dim(), dataset.class_count(), seed)?;
        Ok(Self {
            session: Session::new(dataset.len(), dataset.class_count(), seed),
            session_id: new_session_id(&fingerprint),
            dataset: Arc::new(dataset),
            fingerprint,
            model,
            probs: None,
            trained: false,
            train_config,
            seed,
            generation: 0,
            cache: Mutex::new(ViewCache::default()),
        })
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn model(&self) -> &ClassifierModel {
        &self.model
    }

    pub fn probs(&self) -> Result<&Arc<ProbMatrix>, ServiceError> {
        self.probs.as_ref().ok_or(ServiceError::NotTrained)
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn status(&self, training: TrainingState) -> Status {
        let labels = &self.session.labels;
        let manual = labels.manual_counts();
        let batch = labels.batch_counts();
        let predicted = self.probs.as_ref().map(|p| class_stats(labels, p));
        let state = &self.session.state;
        Status {
            session_id: self.session_id.clone(),
            fingerprint: self.fingerprint.clone(),
            phase: state.phase,
            n: self.dataset.len(),
            m: self.dataset.class_count(),
            classes: self
                .dataset
                .class_names()
                .iter()
                .enumerate()
                .map(|(c, name)| ClassCounts {
                    class: c,
                    name: name.clone(),
                    manual: manual[c],
                    batch: batch[c],
                    predicted_unlabeled: predicted.as_ref().map(|s| s[c].predicted_unlabeled),
                })
                .collect(),
            labeled: labels.labeled_count(),
            log_len: self.session.log().len(),
            focus_class: state.focus_class,
            cutoff: state.class_rank_cutoff,
            selection: state.selection.clone(),
            excluded: state.excluded.iter().copied().collect(),
            trained: self.trained,
            model_epochs: self.model.epoch_counter,
            training,
        }
    }

    pub fn resolve_class(&self, class: &ClassRef) -> Result<ClassId, ServiceError> {
        match class {
            ClassRef::Index(c) => Ok(*c),
            ClassRef::Name(name) => self
                .dataset
                .class_id(name)
                .ok_or_else(|| ServiceError::BadRequest(format!("unknown class name {name:?}"))),
        }
    }

    pub fn apply(&mut self, action: Action) -> Result<MutationResponse, ServiceError> {
        let outcome = self.session.apply(action)?;
        Ok(MutationResponse {
            outcome,
            phase: self.session.state.phase,
        })
    }

    pub fn bootstrap_sample(&self, slots: usize, exclude: &[InstanceId]) -> Result<Vec<InstanceId>, ServiceError> {
        let shown = exclude.iter().copied().collect();
        Ok(workflow::bootstrap_sample(&self.dataset, slots, self.seed, &shown)?)
    }

    fn cache_key(&self) -> CacheKey {
        (self.model.epoch_counter, self.session.log().len(), self.generation)
    }

    pub(crate) fn cached(&self, name: &str) -> Option<Value> {
        self.cache.lock().expect("cache lock").get(self.cache_key(), name)
    }

    pub(crate) fn store(&self, name: String, value: Value) {
        self.cache.lock().expect("cache lock").put(self.cache_key(), name, value);
    }

    pub(crate) fn cache_key_now(&self) -> CacheKey {
        self.cache_key()
    }

    pub(crate) fn store_if(&self, key: CacheKey, name: String, value: Value) {
        if key == self.cache_key() {
            self.store(name, value);
        }
    }

    pub fn class_order(&self, direction: Direction) -> Result<Value, ServiceError> {
        let stats = class_stats(&self.session.labels, self.probs()?);
        let order = workflow::guidance_order(&stats, direction);
        let names = self.dataset.class_names();
        let classes: Vec<Value> = order
            .iter()
            .map(|&c| {
                let s = &stats[c];
                serde_json::json!({
                    "class": c,
                    "name": names[c],
                    "unlabeled_ratio": s.unlabeled_ratio,
                    "predicted_unlabeled": s.predicted_unlabeled,
                    "batch": s.batch_labeled,
                    "manual": s.manually_labeled,
                })
            })
            .collect();
        let (start, len) = self.session.state.class_range;
        Ok(serde_json::json!({
            "direction": direction,
            "order": classes,
            "window": { "start": start, "len": len },
        }))
    }

    pub fn focus_subset(&self) -> Result<FocusSubset, ServiceError> {
        Ok(self.session.focus_subset(self.probs()?)?)
    }

    /// Measure values over the unlabeled instances predicted as the focus class.
    pub fn focus_measures(&self, kind: MeasureKind, k: usize) -> Result<measures::MeasureVector, ServiceError> {
        let subset = self.focus_subset()?;
        let focus = self.session.state.focus_class.ok_or(workflow::WorkflowError::NoFocus)?;
        let ctx = MeasureContext {
            dataset: &self.dataset,
            labels: &self.session.labels,
            probs: self.probs()?,
            k,
        };
        Ok(measures::compute(kind, focus, &subset.unlabeled, ctx)?)
    }

    /// Ids shown in the focus view with their scatter encoding.
    pub fn focus_points(&self) -> Result<Vec<(InstanceId, PointStatus)>, ServiceError> {
        let subset = self.focus_subset()?;
        let state = &self.session.state;
        let other: std::collections::BTreeSet<_> = subset.other.iter().copied().collect();
        Ok(subset
            .all()
            .into_iter()
            .map(|id| {
                let status = if state.excluded.contains(&id) {
                    PointStatus::Excluded
                } else if other.contains(&id) {
                    PointStatus::OtherCutoff
                } else {
                    match self.session.labels.status(id) {
                        LabelStatus::Manual(_) => PointStatus::Manual,
                        LabelStatus::Batch(_) => PointStatus::Batch,
                        LabelStatus::Unlabeled => PointStatus::Unlabeled,
                    }
                };
                (id, status)
            })
            .collect())
    }

    pub fn export_csv(&self) -> Result<Vec<u8>, ServiceError> {
        let mut out = Vec::new();
        workflow::write_labels(
            &mut out,
            &self.session.labels,
            &self.dataset,
            self.probs.as_deref(),
        )?;
        Ok(out)
    }

    pub fn accuracy(&self) -> Result<workflow::Accuracy, ServiceError> {
        Ok(workflow::evaluate_accuracy(
            &self.session.labels,
            self.probs.as_deref(),
            &self.dataset,
        )?)
    }

    pub(crate) fn install_model(&mut self, model: ClassifierModel) {
        self.probs = Some(Arc::new(model.predict_all(&self.dataset)));
        self.model = model;
        self.trained = true;
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            schema_version: SCHEMA_VERSION,
            session_id: self.session_id.clone(),
            fingerprint: self.fingerprint.clone(),
            seed: self.seed,
            state: self.session.state.clone(),
            labels: self.session.labels.clone(),
            log: self.session.log().to_vec(),
            model: String::new(),
            model_init_seed: self.model.init_seed,
            model_epoch_counter: self.model.epoch_counter,
            trained: self.trained,
            train_config: self.train_config.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<SessionSnapshot, ServiceError> {
        let mut snap = self.snapshot();
        snap.model = snapshot::model_path(path)
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        snapshot::write(path, &snap, &self.model)?;
        Ok(snap)
    }

    /// Restores a saved session after checking version, fingerprint and log.
    pub fn load(&mut self, path: &Path) -> Result<SessionSnapshot, ServiceError> {
        let (snap, model) = snapshot::read(path)?;
        if snap.fingerprint != self.fingerprint {
            return Err(ServiceError::FingerprintMismatch {
                expected: self.fingerprint.clone(),
                found: snap.fingerprint,
            });
        }
        if model.dim() != self.dataset.dim() || model.classes() != self.dataset.class_count() {
            return Err(ServiceError::CorruptSnapshot("model shape does not match dataset".into()));
        }
        let session = Session::replay(self.dataset.len(), self.dataset.class_count(), snap.seed, &snap.log)
            .map_err(|e| ServiceError::CorruptSnapshot(format!("log replay failed: {e}")))?;
        if session.state != snap.state || session.labels != snap.labels {
            return Err(ServiceError::CorruptSnapshot(
                "replaying the log does not reproduce the saved labels".into(),
            ));
        }
        self.session = session;
        self.session_id = snap.session_id.clone();
        self.seed = snap.seed;
        self.train_config = snap.train_config.clone();
        if snap.trained {
            self.install_model(model);
        } else {
            self.model = model;
            self.probs = None;
            self.trained = false;
        }
        self.generation += 1;
        Ok(snap)
    }
}
