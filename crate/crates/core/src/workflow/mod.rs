//! The labeling state machine: bootstrap, class guidance, class-based
//! labeling and residual labeling, plus label export and evaluation.

mod labels;

use std::collections::BTreeSet;
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{rank_in_row, ProbMatrix};
use crate::dataset::Dataset;
use crate::kmeans;
use crate::measures::ClassStats;
use crate::{ClassId, InstanceId};

pub use labels::{Action, BatchOutcome, LabelStatus, LabelStore, LogEntry};

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("unknown instance id {0}")]
    UnknownId(InstanceId),
    #[error("unknown class {0}")]
    UnknownClass(ClassId),
    #[error("empty selection")]
    EmptySelection,
    #[error("bootstrap incomplete: every class needs a manual label")]
    BootstrapIncomplete,
    #[error("no focus class set")]
    NoFocus,
    #[error("instance {0} is not in the current selection")]
    NotInSelection(InstanceId),
    #[error("dataset has no ground truth")]
    NoGroundTruth,
    #[error("class-rank cutoff {k} outside 1..={classes}")]
    InvalidCutoff { k: usize, classes: usize },
    #[error("class window {start}+{len} outside {classes} classes")]
    InvalidWindow {
        start: usize,
        len: usize,
        classes: usize,
    },
    #[error("slots must be at least 1")]
    NoSlots,
    #[error("only {} instances left for {requested} slots", available.len())]
    FewerInstancesThanSlots {
        requested: usize,
        available: Vec<InstanceId>,
    },
    #[error("no prediction for instance {0}")]
    MissingPrediction(InstanceId),
    #[error("malformed label file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Bootstrap,
    ClassGuidance,
    ClassLabeling,
    Residual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub phase: Phase,
    pub focus_class: Option<ClassId>,
    pub class_rank_cutoff: usize,
    pub selection: Vec<InstanceId>,
    /// Ids removed from the current selection; cleared with every new selection.
    pub excluded: BTreeSet<InstanceId>,
    /// `(start, len)` window over the ordered class list.
    pub class_range: (usize, usize),
    pub seed: u64,
}

impl SessionState {
    pub fn new(classes: usize, seed: u64) -> Self {
        Self {
            phase: Phase::Bootstrap,
            focus_class: None,
            class_rank_cutoff: 1,
            selection: Vec::new(),
            excluded: BTreeSet::new(),
            class_range: (0, classes.min(10)),
            seed,
        }
    }

    /// Selection minus exclusions, in selection order.
    pub fn active_selection(&self) -> Vec<InstanceId> {
        self.selection
            .iter()
            .copied()
            .filter(|id| !self.excluded.contains(id))
            .collect()
    }
}

/// What an applied action changed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub seq: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<BatchOutcome>,
}

/// One annotator's labeling session: state, labels and the full action log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub state: SessionState,
    pub labels: LabelStore,
    log: Vec<LogEntry>,
}

impl Session {
    pub fn new(instances: usize, classes: usize, seed: u64) -> Self {
        Self {
            state: SessionState::new(classes, seed),
            labels: LabelStore::new(instances, classes),
            log: Vec::new(),
        }
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn instance_count(&self) -> usize {
        self.labels.len()
    }

    pub fn class_count(&self) -> usize {
        self.labels.class_count()
    }

    fn next_seq(&self) -> u64 {
        self.log.last().map_or(1, |e| e.seq + 1)
    }

    fn check_ids(&self, ids: &[InstanceId]) -> Result<(), WorkflowError> {
        match ids.iter().find(|&&id| id >= self.instance_count()) {
            Some(&id) => Err(WorkflowError::UnknownId(id)),
            None => Ok(()),
        }
    }

    fn check_class(&self, class: ClassId) -> Result<(), WorkflowError> {
        if class < self.class_count() {
            Ok(())
        } else {
            Err(WorkflowError::UnknownClass(class))
        }
    }

    /// Validates and applies `action`, appending it to the log on success.
    pub fn apply(&mut self, action: Action) -> Result<ActionOutcome, WorkflowError> {
        let seq = self.next_seq();
        let ts_ms = labels::now_ms();
        self.apply_entry(LogEntry { seq, ts_ms, action })
    }

    fn apply_entry(&mut self, entry: LogEntry) -> Result<ActionOutcome, WorkflowError> {
        let seq = entry.seq;
        let mut batch = None;
        match &entry.action {
            Action::LabelBatch { ids, class } => {
                batch = Some(self.labels.label_batch_seq(ids, *class, seq, entry.ts_ms)?);
                self.sync_phase();
            }
            Action::LabelInstance { id, class } => {
                self.labels.label_instance_seq(*id, *class, seq, entry.ts_ms)?;
                self.sync_phase();
            }
            Action::Select { ids } => {
                self.check_ids(ids)?;
                let mut seen = BTreeSet::new();
                self.state.selection = ids.iter().copied().filter(|id| seen.insert(*id)).collect();
                self.state.excluded.clear();
            }
            Action::Exclude { ids } => {
                if let Some(&id) = ids.iter().find(|id| !self.state.selection.contains(id)) {
                    return Err(WorkflowError::NotInSelection(id));
                }
                self.state.excluded.extend(ids.iter().copied());
            }
            Action::SetFocus { class } => {
                self.check_class(*class)?;
                self.require_bootstrap()?;
                self.state.phase = Phase::ClassLabeling;
                self.state.focus_class = Some(*class);
                self.state.selection.clear();
                self.state.excluded.clear();
            }
            Action::SetCutoff { k } => {
                let classes = self.class_count();
                if *k == 0 || *k > classes {
                    return Err(WorkflowError::InvalidCutoff { k: *k, classes });
                }
                self.state.class_rank_cutoff = *k;
            }
            Action::SetClassWindow { start, len } => {
                let classes = self.class_count();
                if *len == 0 || start + len > classes {
                    return Err(WorkflowError::InvalidWindow {
                        start: *start,
                        len: *len,
                        classes,
                    });
                }
                self.state.class_range = (*start, *len);
            }
            Action::BeginGuidance => {
                self.require_bootstrap()?;
                self.state.phase = Phase::ClassGuidance;
                self.state.focus_class = None;
                self.state.selection.clear();
                self.state.excluded.clear();
            }
            Action::EnterResidual => {
                self.require_bootstrap()?;
                self.state.phase = Phase::Residual;
                self.state.focus_class = None;
                self.state.selection.clear();
                self.state.excluded.clear();
            }
        }
        self.log.push(entry);
        Ok(ActionOutcome { seq, batch })
    }

    fn require_bootstrap(&self) -> Result<(), WorkflowError> {
        if self.labels.bootstrap_complete() {
            Ok(())
        } else {
            Err(WorkflowError::BootstrapIncomplete)
        }
    }

    /// Leaves bootstrap once every class is seeded; falls back to it if a
    /// relabel leaves a class without manual labels.
    fn sync_phase(&mut self) {
        let complete = self.labels.bootstrap_complete();
        match self.state.phase {
            Phase::Bootstrap if complete => self.state.phase = Phase::ClassGuidance,
            Phase::Bootstrap => {}
            _ if !complete => {
                self.state.phase = Phase::Bootstrap;
                self.state.focus_class = None;
            }
            _ => {}
        }
    }

    pub fn label_batch(&mut self, ids: &[InstanceId], class: ClassId) -> Result<BatchOutcome, WorkflowError> {
        let out = self.apply(Action::LabelBatch {
            ids: ids.to_vec(),
            class,
        })?;
        Ok(out.batch.unwrap_or_default())
    }

    /// Batch-labels the active selection (selection minus exclusions) with
    /// the focus class.
    pub fn label_selection(&mut self) -> Result<BatchOutcome, WorkflowError> {
        let class = self.state.focus_class.ok_or(WorkflowError::NoFocus)?;
        let ids = self.state.active_selection();
        self.label_batch(&ids, class)
    }

    pub fn label_instance(&mut self, id: InstanceId, class: ClassId) -> Result<(), WorkflowError> {
        self.apply(Action::LabelInstance { id, class }).map(|_| ())
    }

    pub fn select(&mut self, ids: &[InstanceId]) -> Result<(), WorkflowError> {
        self.apply(Action::Select { ids: ids.to_vec() }).map(|_| ())
    }

    pub fn exclude(&mut self, ids: &[InstanceId]) -> Result<(), WorkflowError> {
        self.apply(Action::Exclude { ids: ids.to_vec() }).map(|_| ())
    }

    pub fn set_focus(&mut self, class: ClassId) -> Result<(), WorkflowError> {
        self.apply(Action::SetFocus { class }).map(|_| ())
    }

    pub fn set_cutoff(&mut self, k: usize) -> Result<(), WorkflowError> {
        self.apply(Action::SetCutoff { k }).map(|_| ())
    }

    pub fn begin_guidance(&mut self) -> Result<(), WorkflowError> {
        self.apply(Action::BeginGuidance).map(|_| ())
    }

    pub fn enter_residual(&mut self) -> Result<(), WorkflowError> {
        self.apply(Action::EnterResidual).map(|_| ())
    }

    /// Focus subset of the current focus class and cutoff.
    pub fn focus_subset(&self, probs: &ProbMatrix) -> Result<FocusSubset, WorkflowError> {
        let focus = self.state.focus_class.ok_or(WorkflowError::NoFocus)?;
        focus_subset(focus, self.state.class_rank_cutoff, probs, &self.labels)
    }

    /// Rebuilds a session by replaying `log` from scratch.
    pub fn replay<'a>(
        instances: usize,
        classes: usize,
        seed: u64,
        log: impl IntoIterator<Item = &'a LogEntry>,
    ) -> Result<Self, WorkflowError> {
        let mut session = Self::new(instances, classes, seed);
        for entry in log {
            session.apply_entry(entry.clone())?;
        }
        Ok(session)
    }

    /// Writes the action log as JSON lines.
    pub fn write_log(&self, mut out: impl Write) -> Result<(), WorkflowError> {
        for e in &self.log {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Parses a JSON-lines action log; sequence numbers must increase.
pub fn read_log(input: impl BufRead) -> Result<Vec<LogEntry>, WorkflowError> {
    let mut entries: Vec<LogEntry> = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: LogEntry = serde_json::from_str(&line)?;
        if entries.last().is_some_and(|p| p.seq >= e.seq) {
            return Err(WorkflowError::Format(format!("sequence number {} out of order", e.seq)));
        }
        entries.push(e);
    }
    Ok(entries)
}

/// One representative per k-means cluster over the instances not yet shown.
///
/// Returns exactly `slots` ids ordered by cluster index. With fewer
/// remaining instances than slots, the error carries all of them.
pub fn bootstrap_sample(
    dataset: &Dataset,
    slots: usize,
    seed: u64,
    already_shown: &BTreeSet<InstanceId>,
) -> Result<Vec<InstanceId>, WorkflowError> {
    if slots == 0 {
        return Err(WorkflowError::NoSlots);
    }
    let remaining: Vec<InstanceId> = dataset.ids().filter(|id| !already_shown.contains(id)).collect();
    if remaining.len() < slots {
        return Err(WorkflowError::FewerInstancesThanSlots {
            requested: slots,
            available: remaining,
        });
    }
    let points: Vec<&[f64]> = remaining.iter().map(|&id| dataset.embedding(id)).collect();
    let clustering = kmeans::kmeans(&points, slots, seed, kmeans::DEFAULT_RESTARTS);
    let mut picked: Vec<InstanceId> = Vec::with_capacity(slots);
    for local in clustering.nearest_points(&points) {
        let id = remaining[local];
        if !picked.contains(&id) {
            picked.push(id);
        }
    }
    // duplicate nearest points only arise with coincident centroids
    for &id in &remaining {
        if picked.len() == slots {
            break;
        }
        if !picked.contains(&id) {
            picked.push(id);
        }
    }
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapStatus {
    pub manual_counts: Vec<usize>,
    /// Classes by ascending manual count, ties by class index.
    pub order: Vec<ClassId>,
    pub complete: bool,
}

pub fn bootstrap_status(labels: &LabelStore) -> BootstrapStatus {
    let manual_counts = labels.manual_counts();
    let mut order: Vec<ClassId> = (0..manual_counts.len()).collect();
    order.sort_by_key(|&c| (manual_counts[c], c));
    let complete = manual_counts.iter().all(|&c| c >= 1);
    BootstrapStatus {
        manual_counts,
        order,
        complete,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Largest unlabeled ratio first.
    #[default]
    Descending,
    Ascending,
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "desc" | "descending" => Ok(Direction::Descending),
            "asc" | "ascending" => Ok(Direction::Ascending),
            _ => Err(format!("unknown direction {s:?}")),
        }
    }
}

/// Classes sorted by unlabeled ratio in `direction`, ties by class index.
pub fn guidance_order(stats: &[ClassStats], direction: Direction) -> Vec<ClassId> {
    let mut order: Vec<&ClassStats> = stats.iter().collect();
    order.sort_by(|a, b| {
        let by_ratio = a.unlabeled_ratio.total_cmp(&b.unlabeled_ratio);
        let by_ratio = match direction {
            Direction::Ascending => by_ratio,
            Direction::Descending => by_ratio.reverse(),
        };
        by_ratio.then(a.class.cmp(&b.class))
    });
    order.into_iter().map(|s| s.class).collect()
}

/// Instances shown for a focus class, split by their scatter encoding.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FocusSubset {
    /// Unlabeled instances predicted as the focus class.
    pub unlabeled: Vec<InstanceId>,
    /// Instances labeled (manual or batch) as the focus class.
    pub labeled: Vec<InstanceId>,
    /// Everything else whose focus-class rank is within the cutoff.
    pub other: Vec<InstanceId>,
}

impl FocusSubset {
    /// All ids, ascending.
    pub fn all(&self) -> Vec<InstanceId> {
        let mut v: Vec<_> = self
            .unlabeled
            .iter()
            .chain(&self.labeled)
            .chain(&self.other)
            .copied()
            .collect();
        v.sort_unstable();
        v
    }

    pub fn len(&self) -> usize {
        self.unlabeled.len() + self.labeled.len() + self.other.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Instances whose focus-class rank is at most `k`, plus every instance
/// labeled as the focus class.
pub fn focus_subset(
    focus: ClassId,
    k: usize,
    probs: &ProbMatrix,
    labels: &LabelStore,
) -> Result<FocusSubset, WorkflowError> {
    if focus >= labels.class_count() {
        return Err(WorkflowError::UnknownClass(focus));
    }
    let mut out = FocusSubset::default();
    for (id, status) in labels.statuses().iter().enumerate() {
        if status.class() == Some(focus) {
            out.labeled.push(id);
            continue;
        }
        let row = probs.row(id).ok_or(WorkflowError::MissingPrediction(id))?;
        let rank = rank_in_row(row, focus);
        if rank > k {
            continue;
        }
        if rank == 1 && !status.is_labeled() {
            out.unlabeled.push(id);
        } else {
            out.other.push(id);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelType {
    Manual,
    Batch,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRow {
    pub id: InstanceId,
    pub class_name: String,
    pub label_type: LabelType,
}

/// Final label per instance: the assigned label or, for unlabeled
/// instances, the model's argmax.
pub fn export_rows(
    labels: &LabelStore,
    dataset: &Dataset,
    probs: Option<&ProbMatrix>,
) -> Result<Vec<ExportRow>, WorkflowError> {
    labels
        .statuses()
        .iter()
        .enumerate()
        .map(|(id, s)| {
            let (class, label_type) = match *s {
                LabelStatus::Manual(c) => (c, LabelType::Manual),
                LabelStatus::Batch(c) => (c, LabelType::Batch),
                LabelStatus::Unlabeled => (
                    probs
                        .and_then(|p| p.argmax(id))
                        .ok_or(WorkflowError::MissingPrediction(id))?,
                    LabelType::Predicted,
                ),
            };
            Ok(ExportRow {
                id,
                class_name: dataset.class_names()[class].clone(),
                label_type,
            })
        })
        .collect()
}

/// Writes `id,class_name,label_type` CSV.
pub fn write_labels(
    out: impl Write,
    labels: &LabelStore,
    dataset: &Dataset,
    probs: Option<&ProbMatrix>,
) -> Result<(), WorkflowError> {
    let rows = export_rows(labels, dataset, probs)?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_labels(
    path: impl AsRef<Path>,
    labels: &LabelStore,
    dataset: &Dataset,
    probs: Option<&ProbMatrix>,
) -> Result<(), WorkflowError> {
    let file = std::fs::File::create(path)?;
    write_labels(io::BufWriter::new(file), labels, dataset, probs)
}

/// Reads an exported label CSV back into a store. Predicted rows are
/// ignored; batch rows become one batch action per class.
pub fn read_labels(input: impl io::Read, dataset: &Dataset) -> Result<LabelStore, WorkflowError> {
    let mut store = LabelStore::new(dataset.len(), dataset.class_count());
    let mut batches: Vec<Vec<InstanceId>> = vec![Vec::new(); dataset.class_count()];
    let mut reader = csv::Reader::from_reader(input);
    for row in reader.deserialize() {
        let row: ExportRow = row?;
        if row.id >= dataset.len() {
            return Err(WorkflowError::UnknownId(row.id));
        }
        let class = dataset
            .class_id(&row.class_name)
            .ok_or_else(|| WorkflowError::Format(format!("unknown class name {:?}", row.class_name)))?;
        match row.label_type {
            LabelType::Manual => store.label_instance(row.id, class)?,
            LabelType::Batch => batches[class].push(row.id),
            LabelType::Predicted => {}
        }
    }
    for (class, ids) in batches.iter().enumerate() {
        if !ids.is_empty() {
            store.label_batch(ids, class)?;
        }
    }
    Ok(store)
}

pub fn import_labels(path: impl AsRef<Path>, dataset: &Dataset) -> Result<LabelStore, WorkflowError> {
    let file = std::fs::File::open(path)?;
    read_labels(io::BufReader::new(file), dataset)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub overall: f64,
    /// `None` when there are no manual labels.
    pub manual_only: Option<f64>,
    pub batch_only: Option<f64>,
    pub manual_count: usize,
    pub batch_count: usize,
}

/// Agreement of the exported labels with the dataset's ground truth.
pub fn evaluate_accuracy(
    labels: &LabelStore,
    probs: Option<&ProbMatrix>,
    dataset: &Dataset,
) -> Result<Accuracy, WorkflowError> {
    if !dataset.has_ground_truth() {
        return Err(WorkflowError::NoGroundTruth);
    }
    let (mut correct, mut total) = (0usize, 0usize);
    let (mut m_ok, mut m_n, mut b_ok, mut b_n) = (0usize, 0usize, 0usize, 0usize);
    for (id, s) in labels.statuses().iter().enumerate() {
        let truth = dataset.truth(id).ok_or(WorkflowError::NoGroundTruth)?;
        let assigned = match *s {
            LabelStatus::Manual(c) => {
                m_n += 1;
                m_ok += usize::from(c == truth);
                c
            }
            LabelStatus::Batch(c) => {
                b_n += 1;
                b_ok += usize::from(c == truth);
                c
            }
            LabelStatus::Unlabeled => probs
                .and_then(|p| p.argmax(id))
                .ok_or(WorkflowError::MissingPrediction(id))?,
        };
        total += 1;
        correct += usize::from(assigned == truth);
    }
    let frac = |ok: usize, n: usize| (n > 0).then(|| ok as f64 / n as f64);
    Ok(Accuracy {
        overall: frac(correct, total).unwrap_or(1.0),
        manual_only: frac(m_ok, m_n),
        batch_only: frac(b_ok, b_n),
        manual_count: m_n,
        batch_count: b_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, Instance, SyntheticSpec};

    fn seeded_session(n: usize, m: usize) -> Session {
        let mut s = Session::new(n, m, 0);
        for c in 0..m {
            s.label_instance(c, c).unwrap();
        }
        s
    }

    #[test]
    fn phases_follow_bootstrap() {
        let mut s = Session::new(10, 3, 0);
        assert_eq!(s.state.phase, Phase::Bootstrap);
        assert!(matches!(s.set_focus(0), Err(WorkflowError::BootstrapIncomplete)));
        assert!(matches!(s.enter_residual(), Err(WorkflowError::BootstrapIncomplete)));
        s.label_instance(0, 0).unwrap();
        s.label_instance(1, 1).unwrap();
        s.label_instance(2, 2).unwrap();
        assert_eq!(s.state.phase, Phase::ClassGuidance);
        s.set_focus(2).unwrap();
        assert_eq!(s.state.phase, Phase::ClassLabeling);
        // relabel empties class 2
        s.label_instance(2, 0).unwrap();
        assert_eq!(s.state.phase, Phase::Bootstrap);
        assert_eq!(s.state.focus_class, None);
    }

    #[test]
    fn set_focus_clears_selection_and_is_idempotent() {
        let mut s = seeded_session(10, 3);
        s.set_focus(1).unwrap();
        s.select(&[4, 5, 6]).unwrap();
        s.exclude(&[5]).unwrap();
        s.set_focus(1).unwrap();
        let first = s.state.clone();
        s.set_focus(1).unwrap();
        assert_eq!(s.state, first);
        assert!(s.state.selection.is_empty());
        assert!(s.state.excluded.is_empty());
        assert!(matches!(s.set_focus(3), Err(WorkflowError::UnknownClass(3))));
    }

    #[test]
    fn exclusions_are_selection_scoped() {
        let mut s = seeded_session(20, 2);
        s.set_focus(0).unwrap();
        let sel: Vec<_> = (10..20).collect();
        s.select(&sel).unwrap();
        s.exclude(&[12, 13]).unwrap();
        s.exclude(&[12]).unwrap();
        assert_eq!(s.state.excluded.len(), 2);
        assert!(matches!(s.exclude(&[3]), Err(WorkflowError::NotInSelection(3))));
        let out = s.label_selection().unwrap();
        assert_eq!(out.labeled.len(), 8);
        s.select(&[1, 2]).unwrap();
        assert!(s.state.excluded.is_empty());
    }

    #[test]
    fn failed_actions_are_not_logged() {
        let mut s = Session::new(5, 2, 0);
        assert!(s.label_instance(7, 0).is_err());
        assert!(s.set_cutoff(3).is_err());
        assert!(s.log().is_empty());
        s.set_cutoff(2).unwrap();
        assert_eq!(s.log().len(), 1);
    }

    #[test]
    fn log_roundtrips_as_json_lines() {
        let mut s = seeded_session(12, 3);
        s.set_focus(1).unwrap();
        s.select(&[5, 6, 7]).unwrap();
        s.exclude(&[6]).unwrap();
        s.label_selection().unwrap();
        s.set_cutoff(2).unwrap();
        let mut buf = Vec::new();
        s.write_log(&mut buf).unwrap();
        let log = read_log(buf.as_slice()).unwrap();
        let r = Session::replay(12, 3, 0, &log).unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn bootstrap_status_examples() {
        let mut l = LabelStore::new(5, 3);
        let st = bootstrap_status(&l);
        assert_eq!(st.manual_counts, vec![0, 0, 0]);
        assert_eq!(st.order[0], 0);
        assert!(!st.complete);
        l.label_instance(0, 1).unwrap();
        l.label_instance(1, 1).unwrap();
        l.label_instance(2, 2).unwrap();
        assert_eq!(bootstrap_status(&l).order, vec![0, 2, 1]);
        l.label_instance(3, 0).unwrap();
        assert!(bootstrap_status(&l).complete);
    }

    fn stats(ratios: &[f64]) -> Vec<ClassStats> {
        ratios
            .iter()
            .enumerate()
            .map(|(class, &r)| ClassStats {
                class,
                predicted_unlabeled: 0,
                batch_labeled: 0,
                manually_labeled: 0,
                unlabeled_ratio: r,
            })
            .collect()
    }

    #[test]
    fn guidance_order_examples() {
        assert_eq!(guidance_order(&stats(&[5.0, 1.0, 3.0]), Direction::Descending), vec![0, 2, 1]);
        assert_eq!(guidance_order(&stats(&[5.0, 1.0, 3.0]), Direction::Ascending), vec![1, 2, 0]);
        assert_eq!(guidance_order(&stats(&[2.0; 4]), Direction::Descending), vec![0, 1, 2, 3]);
        assert_eq!(guidance_order(&stats(&[0.0, 4.0, 1.0]), Direction::Descending).last(), Some(&0));
    }

    #[test]
    fn focus_subset_partitions() {
        let rows = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.2, 0.7, 0.1],
            vec![0.1, 0.2, 0.7],
            vec![0.6, 0.3, 0.1],
            vec![0.3, 0.3, 0.4],
        ];
        let probs = ProbMatrix::from_rows(&rows);
        let mut l = LabelStore::new(5, 3);
        l.label_batch(&[2], 0).unwrap();
        let k1 = focus_subset(0, 1, &probs, &l).unwrap();
        assert_eq!(k1.unlabeled, vec![0, 3]);
        assert_eq!(k1.labeled, vec![2]);
        assert!(k1.other.is_empty());
        let k2 = focus_subset(0, 2, &probs, &l).unwrap();
        assert_eq!(k2.other, vec![1, 4]);
        assert_eq!(focus_subset(0, 3, &probs, &l).unwrap().all(), vec![0, 1, 2, 3, 4]);
        assert!(matches!(focus_subset(3, 1, &probs, &l), Err(WorkflowError::UnknownClass(3))));
    }

    fn tiny_dataset() -> Dataset {
        let instances = (0..4)
            .map(|id| Instance {
                id,
                embedding: vec![id as f64, 0.0],
                image_path: None,
                truth_class: Some(id % 2),
            })
            .collect();
        Dataset::new(vec!["cat".into(), "dog".into()], instances).unwrap()
    }

    #[test]
    fn export_import_roundtrip() {
        let ds = tiny_dataset();
        let probs = ProbMatrix::from_rows(&vec![vec![0.9, 0.1]; 4]);
        let mut l = LabelStore::new(4, 2);
        let mut buf = Vec::new();
        write_labels(&mut buf, &l, &ds, Some(&probs)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|r| r.ends_with(",predicted")).count(), 4);

        l.label_instance(0, 0).unwrap();
        l.label_batch(&[1, 3], 1).unwrap();
        let mut buf = Vec::new();
        write_labels(&mut buf, &l, &ds, Some(&probs)).unwrap();
        let back = read_labels(buf.as_slice(), &ds).unwrap();
        assert_eq!(back.statuses(), l.statuses());
        assert!(matches!(
            write_labels(Vec::new(), &l, &ds, None),
            Err(WorkflowError::MissingPrediction(2))
        ));
    }

    #[test]
    fn accuracy_examples() {
        let ds = tiny_dataset();
        let mut l = LabelStore::new(4, 2);
        for id in 0..4 {
            l.label_instance(id, id % 2).unwrap();
        }
        let a = evaluate_accuracy(&l, None, &ds).unwrap();
        assert_eq!((a.overall, a.manual_only, a.batch_only), (1.0, Some(1.0), None));
        l.label_instance(3, 0).unwrap();
        assert_eq!(evaluate_accuracy(&l, None, &ds).unwrap().manual_only, Some(0.75));

        let unlabeled = (0..3)
            .map(|id| Instance {
                id,
                embedding: vec![0.0, id as f64],
                image_path: None,
                truth_class: None,
            })
            .collect();
        let ds = Dataset::new(vec!["a".into(), "b".into()], unlabeled).unwrap();
        assert!(matches!(
            evaluate_accuracy(&LabelStore::new(3, 2), None, &ds),
            Err(WorkflowError::NoGroundTruth)
        ));
    }

    #[test]
    fn bootstrap_sample_contracts() {
        let spec = SyntheticSpec::blobs(5, 20, 8, 3);
        let ds = generate_synthetic(&spec).unwrap();
        let first = bootstrap_sample(&ds, 5, 1, &BTreeSet::new()).unwrap();
        let mut classes: Vec<_> = first.iter().map(|&i| ds.truth(i).unwrap()).collect();
        classes.sort_unstable();
        assert_eq!(classes, vec![0, 1, 2, 3, 4]);
        assert_eq!(first, bootstrap_sample(&ds, 5, 1, &BTreeSet::new()).unwrap());

        let shown: BTreeSet<_> = first.iter().copied().collect();
        let second = bootstrap_sample(&ds, 5, 1, &shown).unwrap();
        assert!(second.iter().all(|id| !shown.contains(id)));

        let all: BTreeSet<_> = (0..98).collect();
        match bootstrap_sample(&ds, 5, 1, &all) {
            Err(WorkflowError::FewerInstancesThanSlots { available, .. }) => assert_eq!(available, vec![98, 99]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(bootstrap_sample(&ds, 0, 1, &BTreeSet::new()), Err(WorkflowError::NoSlots)));
    }

    #[test]
    fn single_slot_picks_point_nearest_global_mean() {
        let spec = SyntheticSpec::blobs(3, 10, 4, 9);
        let ds = generate_synthetic(&spec).unwrap();
        let got = bootstrap_sample(&ds, 1, 0, &BTreeSet::new()).unwrap();
        let mut mean = vec![0.0; ds.dim()];
        for id in ds.ids() {
            for (m, v) in mean.iter_mut().zip(ds.embedding(id)) {
                *m += v / ds.len() as f64;
            }
        }
        let best = ds
            .ids()
            .min_by(|&a, &b| {
                crate::linalg::sq_dist(ds.embedding(a), &mean)
                    .total_cmp(&crate::linalg::sq_dist(ds.embedding(b), &mean))
            })
            .unwrap();
        assert_eq!(got, vec![best]);
    }
}
