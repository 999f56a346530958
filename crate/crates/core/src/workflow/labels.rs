use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::WorkflowError;
use crate::{ClassId, InstanceId};

/// Label state of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "status", content = "class", rename_all = "snake_case")]
pub enum LabelStatus {
    Unlabeled,
    Batch(ClassId),
    Manual(ClassId),
}

impl LabelStatus {
    pub fn class(self) -> Option<ClassId> {
        match self {
            LabelStatus::Unlabeled => None,
            LabelStatus::Batch(c) | LabelStatus::Manual(c) => Some(c),
        }
    }

    pub fn is_labeled(self) -> bool {
        !matches!(self, LabelStatus::Unlabeled)
    }
}

/// A session mutation. Label actions also land in the [`LabelStore`] history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    LabelBatch { ids: Vec<InstanceId>, class: ClassId },
    LabelInstance { id: InstanceId, class: ClassId },
    Select { ids: Vec<InstanceId> },
    Exclude { ids: Vec<InstanceId> },
    SetFocus { class: ClassId },
    SetCutoff { k: usize },
    SetClassWindow { start: usize, len: usize },
    BeginGuidance,
    EnterResidual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub ts_ms: u64,
    #[serde(flatten)]
    pub action: Action,
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Result of a batch-label action.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub labeled: Vec<InstanceId>,
    /// Manually labeled ids left untouched.
    pub skipped: Vec<InstanceId>,
}

/// Per-instance label status plus the history of labeling actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStore {
    classes: usize,
    statuses: Vec<LabelStatus>,
    history: Vec<LogEntry>,
}

impl LabelStore {
    pub fn new(instances: usize, classes: usize) -> Self {
        Self {
            classes,
            statuses: vec![LabelStatus::Unlabeled; instances],
            history: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.statuses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statuses.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.classes
    }

    pub fn status(&self, id: InstanceId) -> LabelStatus {
        self.statuses[id]
    }

    pub fn statuses(&self) -> &[LabelStatus] {
        &self.statuses
    }

    pub fn history(&self) -> &[LogEntry] {
        &self.history
    }

    pub fn unlabeled(&self) -> impl Iterator<Item = InstanceId> + '_ {
        self.statuses
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_labeled())
            .map(|(i, _)| i)
    }

    pub fn labeled_count(&self) -> usize {
        self.statuses.iter().filter(|s| s.is_labeled()).count()
    }

    pub fn manual_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for s in &self.statuses {
            if let LabelStatus::Manual(c) = s {
                counts[*c] += 1;
            }
        }
        counts
    }

    pub fn batch_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for s in &self.statuses {
            if let LabelStatus::Batch(c) = s {
                counts[*c] += 1;
            }
        }
        counts
    }

    /// Every class has at least one manual label.
    pub fn bootstrap_complete(&self) -> bool {
        self.manual_counts().iter().all(|&c| c >= 1)
    }

    fn check_id(&self, id: InstanceId) -> Result<(), WorkflowError> {
        if id >= self.statuses.len() {
            Err(WorkflowError::UnknownId(id))
        } else {
            Ok(())
        }
    }

    fn check_class(&self, class: ClassId) -> Result<(), WorkflowError> {
        if class >= self.classes {
            Err(WorkflowError::UnknownClass(class))
        } else {
            Ok(())
        }
    }

    fn record(&mut self, seq: u64, ts_ms: u64, action: Action) {
        self.history.push(LogEntry { seq, ts_ms, action });
    }

    fn next_seq(&self) -> u64 {
        self.history.last().map_or(1, |e| e.seq + 1)
    }

    /// Batch-labels `ids` with `class`. Manual labels are never downgraded;
    /// those ids are reported in [`BatchOutcome::skipped`].
    pub fn label_batch(
        &mut self,
        ids: &[InstanceId],
        class: ClassId,
    ) -> Result<BatchOutcome, WorkflowError> {
        let seq = self.next_seq();
        self.label_batch_seq(ids, class, seq, now_ms())
    }

    pub(crate) fn label_batch_seq(
        &mut self,
        ids: &[InstanceId],
        class: ClassId,
        seq: u64,
        ts_ms: u64,
    ) -> Result<BatchOutcome, WorkflowError> {
        if ids.is_empty() {
            return Err(WorkflowError::EmptySelection);
        }
        self.check_class(class)?;
        for &id in ids {
            self.check_id(id)?;
        }
        let mut out = BatchOutcome::default();
        for &id in ids {
            match self.statuses[id] {
                LabelStatus::Manual(_) => out.skipped.push(id),
                _ => {
                    self.statuses[id] = LabelStatus::Batch(class);
                    out.labeled.push(id);
                }
            }
        }
        self.record(
            seq,
            ts_ms,
            Action::LabelBatch {
                ids: ids.to_vec(),
                class,
            },
        );
        Ok(out)
    }

    /// Manually labels one instance, overriding any prior status.
    pub fn label_instance(&mut self, id: InstanceId, class: ClassId) -> Result<(), WorkflowError> {
        let seq = self.next_seq();
        self.label_instance_seq(id, class, seq, now_ms())
    }

    pub(crate) fn label_instance_seq(
        &mut self,
        id: InstanceId,
        class: ClassId,
        seq: u64,
        ts_ms: u64,
    ) -> Result<(), WorkflowError> {
        self.check_id(id)?;
        self.check_class(class)?;
        self.statuses[id] = LabelStatus::Manual(class);
        self.record(seq, ts_ms, Action::LabelInstance { id, class });
        Ok(())
    }

    /// Rebuilds a store by replaying label actions onto an empty one.
    /// Non-label actions are ignored.
    pub fn replay<'a>(
        instances: usize,
        classes: usize,
        log: impl IntoIterator<Item = &'a LogEntry>,
    ) -> Result<Self, WorkflowError> {
        let mut store = Self::new(instances, classes);
        for entry in log {
            match &entry.action {
                Action::LabelBatch { ids, class } => {
                    store.label_batch_seq(ids, *class, entry.seq, entry.ts_ms)?;
                }
                Action::LabelInstance { id, class } => {
                    store.label_instance_seq(*id, *class, entry.seq, entry.ts_ms)?;
                }
                _ => {}
            }
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_labels_unlabeled_and_counts_increase() {
        let mut s = LabelStore::new(30, 3);
        let ids: Vec<_> = (0..19).collect();
        let out = s.label_batch(&ids, 2).unwrap();
        assert_eq!(out.labeled.len(), 19);
        assert!(out.skipped.is_empty());
        assert_eq!(s.batch_counts(), vec![0, 0, 19]);
        assert_eq!(s.history().len(), 1);
    }

    #[test]
    fn batch_skips_manual_labels() {
        let mut s = LabelStore::new(10, 2);
        s.label_instance(3, 0).unwrap();
        s.label_instance(7, 0).unwrap();
        let out = s.label_batch(&(0..10).collect::<Vec<_>>(), 1).unwrap();
        assert_eq!(out.skipped, vec![3, 7]);
        assert_eq!(s.status(3), LabelStatus::Manual(0));
        assert_eq!(out.labeled.len(), 8);
    }

    #[test]
    fn relabel_batch_conserves_partition() {
        let mut s = LabelStore::new(12, 3);
        s.label_batch(&[0, 1, 2, 3], 0).unwrap();
        s.label_batch(&[2, 3], 1).unwrap();
        assert_eq!(s.status(2), LabelStatus::Batch(1));
        let labeled: usize = s.batch_counts().iter().sum::<usize>() + s.manual_counts().iter().sum::<usize>();
        assert_eq!(labeled + s.unlabeled().count(), 12);
    }

    #[test]
    fn instance_label_transitions() {
        let mut s = LabelStore::new(3, 3);
        s.label_instance(0, 1).unwrap();
        assert_eq!(s.status(0), LabelStatus::Manual(1));
        s.label_batch(&[1], 1).unwrap();
        s.label_instance(1, 2).unwrap();
        assert_eq!(s.status(1), LabelStatus::Manual(2));
        let before = s.statuses().to_vec();
        s.label_instance(1, 2).unwrap();
        assert_eq!(s.statuses(), &before[..]);
        assert!(matches!(s.label_instance(9, 0), Err(WorkflowError::UnknownId(9))));
        assert!(matches!(s.label_instance(0, 3), Err(WorkflowError::UnknownClass(3))));
        assert!(matches!(s.label_batch(&[], 0), Err(WorkflowError::EmptySelection)));
    }

    #[test]
    fn replay_reproduces_statuses() {
        let mut s = LabelStore::new(8, 2);
        s.label_batch(&[0, 1, 2], 0).unwrap();
        s.label_instance(1, 1).unwrap();
        s.label_batch(&[1, 2, 5], 1).unwrap();
        let r = LabelStore::replay(8, 2, s.history()).unwrap();
        assert_eq!(r, s);
    }
}
