//! Class-centric visual interactive labeling engine.
//!
//! The crate is organised around the labeling loop: a [`dataset::Dataset`]
//! of precomputed embeddings, a small MLP [`classifier`], per-instance
//! property [`measures`], the numeric backends of the views ([`analytics`]),
//! the labeling state machine ([`workflow`]) and a headless oracle
//! [`simulator`] that replays the workflow with ground-truth annotators.

pub mod analytics;
pub mod classifier;
pub mod dataset;
pub mod kmeans;
pub mod measures;
pub mod simulator;
pub mod workflow;

mod linalg;

/// Index of a class in [`dataset::Dataset::class_names`].
pub type ClassId = usize;

/// Index of an instance; instance ids are always `0..n`.
pub type InstanceId = usize;

pub use classifier::{ClassifierModel, ProbMatrix, TrainConfig};
pub use dataset::{Dataset, Instance, SyntheticSpec};
pub use measures::{MeasureKind, MeasureVector};
pub use workflow::{LabelStatus, LabelStore, Phase, Session, SessionState};
