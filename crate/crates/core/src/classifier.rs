//! Two-hidden-layer MLP (d → 50 → 20 → m) trained on manual and batch
//! labels with per-sample loss weights.
//!
//! Parameters live in one flat vector in the order `W1, b1, W2, b2, W3, b3`;
//! every weight matrix is row-major `out x in`. The checkpoint format writes
//! that vector verbatim.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::workflow::{LabelStatus, LabelStore};
use crate::{ClassId, InstanceId};

pub const HIDDEN1: usize = 50;
pub const HIDDEN2: usize = 20;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CVMD";

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("class {0} has no labeled instances")]
    BootstrapIncomplete(ClassId),
    #[error("no training samples with positive weight")]
    EmptyTrainingSet,
    #[error("unknown instance id {0}")]
    UnknownId(InstanceId),
    #[error("unknown class {0}")]
    UnknownClass(ClassId),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Loss weight of batch-labeled samples; manual samples weigh 1.0.
    pub batch_label_weight: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Continue from the current parameters instead of re-initialising.
    pub warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            batch_label_weight: 0.1,
            seed: 0,
            optimizer: Optimizer::Adam,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Mean weighted cross-entropy over the training set after the last epoch.
    pub final_loss: f64,
    /// Fraction of training samples whose argmax matches their label.
    pub train_accuracy: f64,
    pub samples: usize,
    pub cancelled: bool,
}

/// One training example: features, target class and loss weight.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub target: ClassId,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    dim: usize,
    classes: usize,
    params: Vec<f64>,
    pub init_seed: u64,
    pub epoch_counter: u64,
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    d: usize,
    m: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

impl Layout {
    fn new(d: usize, m: usize) -> Self {
        let w1 = 0;
        let b1 = w1 + HIDDEN1 * d;
        let w2 = b1 + HIDDEN1;
        let b2 = w2 + HIDDEN2 * HIDDEN1;
        let w3 = b2 + HIDDEN2;
        let b3 = w3 + m * HIDDEN2;
        let len = b3 + m;
        Self { d, m, w1, b1, w2, b2, w3, b3, len }
    }
}

/// Hidden activations kept for the backward pass.
struct Trace {
    z1: [f64; HIDDEN1],
    a1: [f64; HIDDEN1],
    z2: [f64; HIDDEN2],
    a2: [f64; HIDDEN2],
    logits: Vec<f64>,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax_at(logits: &[f64], k: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits[k] - lse
}

impl ClassifierModel {
    /// Seeded uniform init in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(dim: usize, classes: usize, seed: u64) -> Result<Self, ClassifierError> {
        if dim < 2 || classes < 2 {
            return Err(ClassifierError::InvalidShape(format!(
                "need d >= 2 and m >= 2, got d={dim}, m={classes}"
            )));
        }
        let layout = Layout::new(dim, classes);
        let mut params = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (off, fan_in, fan_out) in [
            (layout.w1, dim, HIDDEN1),
            (layout.w2, HIDDEN1, HIDDEN2),
            (layout.w3, HIDDEN2, classes),
        ] {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[off..off + fan_in * fan_out] {
                *p = rng.random_range(-limit..limit);
            }
        }
        Ok(Self {
            dim,
            classes,
            params,
            init_seed: seed,
            epoch_counter: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn layout(&self) -> Layout {
        Layout::new(self.dim, self.classes)
    }

    fn forward_trace(&self, x: &[f64]) -> Trace {
        let l = self.layout();
        let p = &self.params;
        let mut z1 = [0.0; HIDDEN1];
        let mut a1 = [0.0; HIDDEN1];
        for h in 0..HIDDEN1 {
            let row = &p[l.w1 + h * l.d..l.w1 + (h + 1) * l.d];
            z1[h] = p[l.b1 + h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            a1[h] = z1[h].max(0.0);
        }
        let mut z2 = [0.0; HIDDEN2];
        let mut a2 = [0.0; HIDDEN2];
        for h in 0..HIDDEN2 {
            let row = &p[l.w2 + h * HIDDEN1..l.w2 + (h + 1) * HIDDEN1];
            z2[h] = p[l.b2 + h] + row.iter().zip(&a1).map(|(w, v)| w * v).sum::<f64>();
            a2[h] = z2[h].max(0.0);
        }
        let logits = (0..l.m)
            .map(|k| {
                let row = &p[l.w3 + k * HIDDEN2..l.w3 + (k + 1) * HIDDEN2];
                p[l.b3 + k] + row.iter().zip(&a2).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        Trace { z1, a1, z2, a2, logits }
    }

    /// Pre-softmax outputs for one input vector.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).logits
    }

    pub fn predict_one(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Weighted cross-entropy `(1/B) Σ w_i · (−log p_i[y_i])` and its gradient
    /// with respect to every parameter (same layout as [`Self::params`]).
    pub fn loss_and_grad(&self, batch: &[Sample<'_>]) -> Result<(f64, Vec<f64>), ClassifierError> {
        if batch.is_empty() {
            return Err(ClassifierError::InvalidShape("empty batch".into()));
        }
        let l = self.layout();
        let p = &self.params;
        let mut grad = vec![0.0; l.len];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for s in batch {
            if s.x.len() != l.d {
                return Err(ClassifierError::InvalidShape(format!(
                    "input has {} features, model expects {}",
                    s.x.len(),
                    l.d
                )));
            }
            if s.target >= l.m {
                return Err(ClassifierError::UnknownClass(s.target));
            }
            let t = self.forward_trace(s.x);
            loss -= s.weight * scale * log_softmax_at(&t.logits, s.target);
            if s.weight == 0.0 {
                continue;
            }
            let probs = softmax(&t.logits);
            let coef = s.weight * scale;
            let dz3: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(k, pk)| coef * (pk - if k == s.target { 1.0 } else { 0.0 }))
                .collect();

            let mut da2 = [0.0; HIDDEN2];
            for (k, g) in dz3.iter().enumerate() {
                grad[l.b3 + k] += g;
                for h in 0..HIDDEN2 {
                    grad[l.w3 + k * HIDDEN2 + h] += g * t.a2[h];
                    da2[h] += g * p[l.w3 + k * HIDDEN2 + h];
                }
            }
            let mut da1 = [0.0; HIDDEN1];
            for h in 0..HIDDEN2 {
                if t.z2[h] <= 0.0 {
                    continue;
                }
                let g = da2[h];
                grad[l.b2 + h] += g;
                for j in 0..HIDDEN1 {
                    grad[l.w2 + h * HIDDEN1 + j] += g * t.a1[j];
                    da1[j] += g * p[l.w2 + h * HIDDEN1 + j];
                }
            }
            for h in 0..HIDDEN1 {
                if t.z1[h] <= 0.0 {
                    continue;
                }
                let g = da1[h];
                grad[l.b1 + h] += g;
                for (j, xv) in s.x.iter().enumerate() {
                    grad[l.w1 + h * l.d + j] += g * xv;
                }
            }
        }
        Ok((loss, grad))
    }

    /// Trains on the labeled instances of `labels`. See [`Self::train_with`].
    pub fn train(
        &mut self,
        dataset: &Dataset,
        labels: &LabelStore,
        config: &TrainConfig,
    ) -> Result<TrainReport, ClassifierError> {
        self.train_with(dataset, labels, config, |_, _| ControlFlow::Continue(()))
    }

    /// Mini-batch training over seeded shuffles. `progress(epoch, mean_loss)`
    /// runs after every epoch; returning `Break` stops training early.
    ///
    /// Manual labels weigh 1.0 and batch labels `config.batch_label_weight`.
    /// Samples with zero weight are dropped before shuffling, so they leave
    /// the result untouched.
    pub fn train_with(
        &mut self,
        dataset: &Dataset,
        labels: &LabelStore,
        config: &TrainConfig,
        mut progress: impl FnMut(usize, f64) -> ControlFlow<()>,
    ) -> Result<TrainReport, ClassifierError> {
        if dataset.dim() != self.dim || labels.class_count() != self.classes {
            return Err(ClassifierError::InvalidShape(
                "model shape does not match dataset".into(),
            ));
        }
        let mut per_class = vec![0usize; self.classes];
        for s in labels.statuses() {
            if let Some(c) = s.class() {
                per_class[c] += 1;
            }
        }
        if let Some(c) = per_class.iter().position(|&n| n == 0) {
            return Err(ClassifierError::BootstrapIncomplete(c));
        }

        let samples: Vec<Sample<'_>> = labels
            .statuses()
            .iter()
            .enumerate()
            .filter_map(|(id, s)| {
                let (target, weight) = match *s {
                    LabelStatus::Manual(c) => (c, 1.0),
                    LabelStatus::Batch(c) => (c, config.batch_label_weight),
                    LabelStatus::Unlabeled => return None,
                };
                (weight > 0.0).then(|| Sample {
                    x: dataset.embedding(id),
                    target,
                    weight,
                })
            })
            .collect();
        self.fit(&samples, config, &mut progress)
    }

    /// Trains directly on explicit samples.
    pub fn fit(
        &mut self,
        samples: &[Sample<'_>],
        config: &TrainConfig,
        progress: &mut dyn FnMut(usize, f64) -> ControlFlow<()>,
    ) -> Result<TrainReport, ClassifierError> {
        let samples: Vec<Sample<'_>> = samples.iter().copied().filter(|s| s.weight > 0.0).collect();
        if samples.is_empty() {
            return Err(ClassifierError::EmptyTrainingSet);
        }
        if !config.warm_start {
            let fresh = Self::new(self.dim, self.classes, self.init_seed)?;
            self.params = fresh.params;
        }
        let batch_size = config.batch_size.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut adam = AdamState::new(self.params.len());
        let mut batch = Vec::with_capacity(batch_size);
        let mut epochs_run = 0;
        let mut cancelled = false;

        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(batch_size) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| samples[i]));
                let (loss, grad) = self.loss_and_grad(&batch)?;
                epoch_loss += loss;
                batches += 1;
                match config.optimizer {
                    Optimizer::Sgd => {
                        for (p, g) in self.params.iter_mut().zip(&grad) {
                            *p -= config.learning_rate * g;
                        }
                    }
                    Optimizer::Adam => adam.step(&mut self.params, &grad, config.learning_rate),
                }
            }
            epochs_run += 1;
            self.epoch_counter += 1;
            if progress(epoch + 1, epoch_loss / batches as f64).is_break() {
                cancelled = true;
                break;
            }
        }

        let (final_loss, _) = self.loss_and_grad(&samples)?;
        let correct = samples
            .iter()
            .filter(|s| argmax(&self.logits(s.x)) == s.target)
            .count();
        Ok(TrainReport {
            epochs_run,
            final_loss,
            train_accuracy: correct as f64 / samples.len() as f64,
            samples: samples.len(),
            cancelled,
        })
    }

    /// Class probabilities for `ids`.
    pub fn predict_proba(
        &self,
        dataset: &Dataset,
        ids: &[InstanceId],
    ) -> Result<ProbMatrix, ClassifierError> {
        let mut data = Vec::with_capacity(ids.len() * self.classes);
        for &id in ids {
            if id >= dataset.len() {
                return Err(ClassifierError::UnknownId(id));
            }
            data.extend(self.predict_one(dataset.embedding(id)));
        }
        Ok(ProbMatrix::new(self.classes, ids.to_vec(), data))
    }

    /// Probabilities for every instance of `dataset`.
    pub fn predict_all(&self, dataset: &Dataset) -> ProbMatrix {
        let ids: Vec<_> = dataset.ids().collect();
        self.predict_proba(dataset, &ids)
            .expect("ids drawn from the dataset")
    }

    pub fn write_checkpoint(&self, mut out: impl Write) -> io::Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.classes as u32).to_le_bytes())?;
        for p in &self.params {
            out.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + 8 * self.params.len());
        self.write_checkpoint(&mut buf).expect("writing to a Vec");
        buf
    }

    /// Reads a checkpoint. `init_seed` and `epoch_counter` are not part of the
    /// format and come back as zero.
    pub fn read_checkpoint(mut input: impl Read) -> Result<Self, ClassifierError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(ClassifierError::Checkpoint("missing CVMD header".into()));
        }
        let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let m = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let layout = Layout::new(d, m);
        let body = &bytes[12..];
        if body.len() != layout.len * 8 {
            return Err(ClassifierError::Checkpoint(format!(
                "expected {} parameter bytes for d={d}, m={m}, found {}",
                layout.len * 8,
                body.len()
            )));
        }
        let params: Vec<f64> = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(ClassifierError::Checkpoint("non-finite parameter".into()));
        }
        let mut model = Self::new(d, m, 0)?;
        model.params = params;
        Ok(model)
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

/// Class probabilities, one row per instance id.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    classes: usize,
    ids: Vec<InstanceId>,
    data: Vec<f64>,
    index: HashMap<InstanceId, usize>,
}

impl ProbMatrix {
    pub fn new(classes: usize, ids: Vec<InstanceId>, data: Vec<f64>) -> Self {
        assert_eq!(ids.len() * classes, data.len(), "probability matrix shape");
        let index = ids.iter().enumerate().map(|(row, &id)| (id, row)).collect();
        Self {
            classes,
            ids,
            data,
            index,
        }
    }

    /// Builds a matrix from explicit rows; ids are the row positions.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let classes = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flatten().copied().collect();
        Self::new(classes, (0..rows.len()).collect(), data)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn ids(&self) -> &[InstanceId] {
        &self.ids
    }

    pub fn row(&self, id: InstanceId) -> Option<&[f64]> {
        self.index
            .get(&id)
            .map(|&r| &self.data[r * self.classes..(r + 1) * self.classes])
    }

    /// Most probable class; ties go to the lower class index.
    pub fn argmax(&self, id: InstanceId) -> Option<ClassId> {
        self.row(id).map(argmax)
    }

    pub fn rows(&self) -> impl Iterator<Item = (InstanceId, &[f64])> {
        self.ids.iter().copied().zip(self.data.chunks_exact(self.classes.max(1)))
    }
}

/// Rank (1-based) of `class` in `row` sorted by descending probability;
/// ties are broken by ascending class index.
pub fn rank_in_row(row: &[f64], class: ClassId) -> usize {
    let pc = row[class];
    1 + row
        .iter()
        .enumerate()
        .filter(|&(c, &p)| p > pc || (p == pc && c < class))
        .count()
}

/// Rank of `class` among the predicted classes of instance `id`.
pub fn class_rank(probs: &ProbMatrix, id: InstanceId, class: ClassId) -> Result<usize, ClassifierError> {
    let row = probs.row(id).ok_or(ClassifierError::UnknownId(id))?;
    if class >= row.len() {
        return Err(ClassifierError::UnknownClass(class));
    }
    Ok(rank_in_row(row, class))
}
