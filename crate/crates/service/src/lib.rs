//! HTTP host for a single cvil labeling session.
//!
//! One [`Engine`] owns the dataset, session state, label store and model.
//! Reads share it concurrently; mutations are serialized through a write
//! lock and rejected while a background training run is active.

mod engine;
mod error;
mod routes;
pub mod snapshot;

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use cvil_core::classifier::TrainReport;
use cvil_core::dataset::load_manifest;
use cvil_core::{Dataset, TrainConfig};

pub use engine::{
    ClassCounts, ClassRef, Engine, MutationResponse, PointStatus, ProjectedPoint, Status, TrainingState,
};
pub use error::ServiceError;
pub use routes::router;
pub use snapshot::SessionSnapshot;

/// Epochs between two training progress events.
pub const PROGRESS_EVERY: usize = 10;

#[derive(Debug, Clone, Default)]
pub struct ServeConfig {
    pub seed: u64,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerEvent {
    Training { epoch: usize, epochs: usize, loss: f64 },
    Trained { report: TrainReport, model_epochs: u64 },
    Cancelled { epoch: usize },
    TrainingFailed { message: String },
    /// Cached views computed before `seq` are stale.
    Invalidated { seq: u64 },
}

impl ServerEvent {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Training { .. } => "training",
            Self::Trained { .. } => "trained",
            Self::Cancelled { .. } => "cancelled",
            Self::TrainingFailed { .. } => "training_failed",
            Self::Invalidated { .. } => "invalidated",
        }
    }
}

struct Shared {
    engine: RwLock<Engine>,
    events: broadcast::Sender<ServerEvent>,
    asset_root: PathBuf,
    training: Mutex<Option<TrainingState>>,
    cancel: AtomicBool,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(dataset: Dataset, asset_root: impl Into<PathBuf>, config: ServeConfig) -> Result<Self, ServiceError> {
        let engine = Engine::new(dataset, config.seed, config.train)?;
        let (events, _) = broadcast::channel(256);
        Ok(Self(Arc::new(Shared {
            engine: RwLock::new(engine),
            events,
            asset_root: asset_root.into(),
            training: Mutex::new(None),
            cancel: AtomicBool::new(false),
        })))
    }

    /// Loads the manifest; image paths resolve against its directory.
    pub fn open(manifest: impl AsRef<Path>, config: ServeConfig) -> Result<Self, ServiceError> {
        let manifest = manifest.as_ref();
        let dataset = load_manifest(manifest)?;
        let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(dataset, root, config)
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Engine> {
        self.0.engine.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, Engine> {
        self.0.engine.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn asset_root(&self) -> &Path {
        &self.0.asset_root
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ServerEvent> {
        self.0.events.subscribe()
    }

    fn emit(&self, event: ServerEvent) {
        let _ = self.0.events.send(event);
    }

    pub fn training_state(&self) -> TrainingState {
        self.0
            .training
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
            .unwrap_or(TrainingState::Idle)
    }

    pub fn is_training(&self) -> bool {
        self.0.training.lock().unwrap_or_else(|e| e.into_inner()).is_some()
    }

    pub fn status(&self) -> Status {
        let training = self.training_state();
        self.read().status(training)
    }

    /// Runs `f` under the write lock unless training is active, then
    /// announces the new log position.
    pub fn mutate<T>(&self, f: impl FnOnce(&mut Engine) -> Result<T, ServiceError>) -> Result<T, ServiceError> {
        let mut engine = self.write();
        if self.is_training() {
            return Err(ServiceError::Busy);
        }
        let before = engine.session().log().len();
        let out = f(&mut engine)?;
        if engine.session().log().len() != before {
            let seq = engine.session().log().last().map_or(0, |e| e.seq);
            self.emit(ServerEvent::Invalidated { seq });
        }
        Ok(out)
    }

    pub fn load_session(&self, path: &Path) -> Result<SessionSnapshot, ServiceError> {
        let mut engine = self.write();
        if self.is_training() {
            return Err(ServiceError::Busy);
        }
        let snap = engine.load(path)?;
        let seq = engine.session().log().last().map_or(0, |e| e.seq);
        self.emit(ServerEvent::Invalidated { seq });
        Ok(snap)
    }

    /// Starts a background training run on a copy of the current labels.
    /// The model is swapped in only when the run completes uncancelled.
    pub fn start_training(&self, config: TrainConfig) -> Result<TrainConfig, ServiceError> {
        let engine = self.write();
        let mut training = self.0.training.lock().unwrap_or_else(|e| e.into_inner());
        if training.is_some() {
            return Err(ServiceError::Busy);
        }
        let counts = engine.session().labels.manual_counts();
        let batch = engine.session().labels.batch_counts();
        if let Some(c) = (0..counts.len()).find(|&c| counts[c] + batch[c] == 0) {
            return Err(cvil_core::classifier::ClassifierError::BootstrapIncomplete(c).into());
        }
        let dataset = Arc::clone(engine.dataset());
        let labels = engine.session().labels.clone();
        let mut model = engine.model().clone();
        *training = Some(TrainingState::Training {
            epoch: 0,
            epochs: config.epochs,
            loss: None,
        });
        self.0.cancel.store(false, Ordering::SeqCst);
        drop(training);
        drop(engine);

        let state = self.clone();
        let cfg = config.clone();
        tokio::task::spawn_blocking(move || {
            let epochs = cfg.epochs;
            let result = model.train_with(&dataset, &labels, &cfg, |epoch, loss| {
                *state.0.training.lock().unwrap_or_else(|e| e.into_inner()) = Some(TrainingState::Training {
                    epoch,
                    epochs,
                    loss: Some(loss),
                });
                if epoch % PROGRESS_EVERY == 0 {
                    state.emit(ServerEvent::Training { epoch, epochs, loss });
                }
                if state.0.cancel.load(Ordering::SeqCst) {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            });
            state.finish_training(model, result, cfg);
        });
        Ok(config)
    }

    fn finish_training(
        &self,
        model: cvil_core::ClassifierModel,
        result: Result<TrainReport, cvil_core::classifier::ClassifierError>,
        config: TrainConfig,
    ) {
        let mut engine = self.write();
        let event = match result {
            Ok(report) if report.cancelled => {
                tracing::info!(epoch = report.epochs_run, "training cancelled");
                ServerEvent::Cancelled {
                    epoch: report.epochs_run,
                }
            }
            Ok(report) => {
                engine.install_model(model);
                engine.train_config = config;
                tracing::info!(loss = report.final_loss, "training finished");
                ServerEvent::Trained {
                    report,
                    model_epochs: engine.model().epoch_counter,
                }
            }
            Err(e) => {
                tracing::warn!(error = %e, "training failed");
                ServerEvent::TrainingFailed { message: e.to_string() }
            }
        };
        *self.0.training.lock().unwrap_or_else(|e| e.into_inner()) = None;
        drop(engine);
        self.emit(event);
    }

    pub fn cancel_training(&self) -> Result<(), ServiceError> {
        if !self.is_training() {
            return Err(ServiceError::NotTraining);
        }
        self.0.cancel.store(true, Ordering::SeqCst);
        Ok(())
    }
}

/// Serves `state` on `listener` until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
