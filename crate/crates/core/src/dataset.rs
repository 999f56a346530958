//! Instances, manifests and synthetic datasets.
//!
//! A [`Dataset`] is an immutable set of embedding vectors with ids `0..n`,
//! an ordered class list and, for evaluation datasets only, a ground-truth
//! class per instance. Embeddings are stored on disk as 32-bit floats and
//! widened to `f64` on load.
//!
//! Ground truth is exposed through [`Dataset::truth`]; only the simulator
//! and the accuracy evaluator read it.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{ClassId, InstanceId};

/// Magic prefix of the binary embedding format.
pub const EMBEDDING_MAGIC: &[u8; 4] = b"CVEM";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("embedding row {row}: expected {expected} values, found {found}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("embedding row {row}, column {col}: value is not finite")]
    NonFiniteValue { row: usize, col: usize },
    #[error("duplicate instance id {0}")]
    DuplicateId(InstanceId),
    #[error("unknown class name {0:?}")]
    UnknownClassName(String),
    #[error("instance ids must be 0..n in row order: {0}")]
    InvalidIds(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One labeled-or-not item: an embedding plus optional asset and truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: InstanceId,
    pub embedding: Vec<f64>,
    pub image_path: Option<String>,
    pub truth_class: Option<ClassId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    class_names: Vec<String>,
    /// Row-major `n x dim`.
    embeddings: Vec<f64>,
    image_paths: Vec<Option<String>>,
    truth: Vec<Option<ClassId>>,
}

impl Dataset {
    /// Builds and validates a dataset. Instances must carry ids `0..n` in order.
    pub fn new(class_names: Vec<String>, instances: Vec<Instance>) -> Result<Self, DatasetError> {
        if class_names.len() < 2 {
            return Err(DatasetError::Format(format!(
                "need at least 2 classes, got {}",
                class_names.len()
            )));
        }
        let dim = instances.first().map(|i| i.embedding.len()).unwrap_or(2);
        if dim < 2 {
            return Err(DatasetError::Format(format!("dimension must be >= 2, got {dim}")));
        }
        let n = instances.len();
        let mut embeddings = Vec::with_capacity(n * dim);
        let mut image_paths = Vec::with_capacity(n);
        let mut truth = Vec::with_capacity(n);
        for (row, inst) in instances.into_iter().enumerate() {
            if inst.id != row {
                return Err(DatasetError::InvalidIds(format!("row {row} has id {}", inst.id)));
            }
            if inst.embedding.len() != dim {
                return Err(DatasetError::DimensionMismatch {
                    row,
                    expected: dim,
                    found: inst.embedding.len(),
                });
            }
            if let Some(col) = inst.embedding.iter().position(|v| !v.is_finite()) {
                return Err(DatasetError::NonFiniteValue { row, col });
            }
            if let Some(c) = inst.truth_class {
                if c >= class_names.len() {
                    return Err(DatasetError::Format(format!(
                        "row {row}: truth class {c} out of range"
                    )));
                }
            }
            embeddings.extend_from_slice(&inst.embedding);
            image_paths.push(inst.image_path);
            truth.push(inst.truth_class);
        }
        Ok(Self {
            dim,
            class_names,
            embeddings,
            image_paths,
            truth,
        })
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_id(&self, name: &str) -> Option<ClassId> {
        self.class_names.iter().position(|c| c == name)
    }

    /// # Panics
    /// Panics if `id >= len()`.
    pub fn embedding(&self, id: InstanceId) -> &[f64] {
        &self.embeddings[id * self.dim..(id + 1) * self.dim]
    }

    pub fn embeddings_flat(&self) -> &[f64] {
        &self.embeddings
    }

    pub fn image_path(&self, id: InstanceId) -> Option<&str> {
        self.image_paths.get(id).and_then(|p| p.as_deref())
    }

    /// Ground-truth class of `id`. Reserved for oracles and evaluation.
    pub fn truth(&self, id: InstanceId) -> Option<ClassId> {
        self.truth.get(id).copied().flatten()
    }

    /// True when every instance carries a ground-truth class.
    pub fn has_ground_truth(&self) -> bool {
        !self.truth.is_empty() && self.truth.iter().all(Option::is_some)
    }

    pub fn instance(&self, id: InstanceId) -> Instance {
        Instance {
            id,
            embedding: self.embedding(id).to_vec(),
            image_path: self.image_paths[id].clone(),
            truth_class: self.truth[id],
        }
    }

    pub fn ids(&self) -> std::ops::Range<InstanceId> {
        0..self.len()
    }
}

// ---------------------------------------------------------------------------
// Manifest files

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub dim: usize,
    pub class_names: Vec<String>,
    /// Embedding file path, relative to the manifest's directory.
    pub embeddings: String,
    pub instances: Vec<ManifestInstance>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestInstance {
    pub id: InstanceId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmbeddingFormat {
    Csv,
    #[default]
    Binary,
}

/// Loads and validates a manifest and its embedding file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(DatasetError::MissingFile(path.to_path_buf()));
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(path)?)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let emb_path = base.join(&manifest.embeddings);
    if !emb_path.exists() {
        return Err(DatasetError::MissingFile(emb_path));
    }

    // Every earlier row holds id == row, so a smaller id is a repeat.
    for (row, inst) in manifest.instances.iter().enumerate() {
        if inst.id < row {
            return Err(DatasetError::DuplicateId(inst.id));
        }
        if inst.id != row {
            return Err(DatasetError::InvalidIds(format!("row {row} has id {}", inst.id)));
        }
    }

    let n = manifest.instances.len();
    let rows = read_embeddings(&emb_path, n, manifest.dim)?;

    let mut instances = Vec::with_capacity(n);
    for (inst, embedding) in manifest.instances.into_iter().zip(rows) {
        let truth_class = match inst.truth {
            Some(name) => Some(
                manifest
                    .class_names
                    .iter()
                    .position(|c| *c == name)
                    .ok_or(DatasetError::UnknownClassName(name))?,
            ),
            None => None,
        };
        instances.push(Instance {
            id: inst.id,
            embedding,
            image_path: inst.image,
            truth_class,
        });
    }
    if instances.is_empty() {
        return Err(DatasetError::Format("manifest lists no instances".into()));
    }
    Dataset::new(manifest.class_names, instances)
}

fn read_embeddings(path: &Path, n: usize, dim: usize) -> Result<Vec<Vec<f64>>, DatasetError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.starts_with(EMBEDDING_MAGIC) {
        read_binary(&bytes, n, dim)
    } else {
        read_csv(&bytes, n, dim)
    }
}

fn read_binary(bytes: &[u8], n: usize, dim: usize) -> Result<Vec<Vec<f64>>, DatasetError> {
    let u32_at = |off: usize| -> Result<u32, DatasetError> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| DatasetError::Format("truncated binary header".into()))
    };
    let file_n = u32_at(4)? as usize;
    let file_d = u32_at(8)? as usize;
    if file_n != n {
        return Err(DatasetError::Format(format!(
            "binary file has {file_n} rows, manifest lists {n} instances"
        )));
    }
    if file_d != dim {
        return Err(DatasetError::DimensionMismatch {
            row: 0,
            expected: dim,
            found: file_d,
        });
    }
    let body = &bytes[12..];
    if body.len() != n * dim * 4 {
        return Err(DatasetError::Format(format!(
            "binary body is {} bytes, expected {}",
            body.len(),
            n * dim * 4
        )));
    }
    let mut rows = Vec::with_capacity(n);
    for (row, chunk) in body.chunks_exact(dim * 4).enumerate() {
        let mut out = Vec::with_capacity(dim);
        for (col, b) in chunk.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(b.try_into().unwrap());
            if !v.is_finite() {
                return Err(DatasetError::NonFiniteValue { row, col });
            }
            out.push(v as f64);
        }
        rows.push(out);
    }
    Ok(rows)
}

fn read_csv(bytes: &[u8], n: usize, dim: usize) -> Result<Vec<Vec<f64>>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let header = reader.headers()?.clone();
    let expected: Vec<String> = std::iter::once("id".to_string())
        .chain((0..dim).map(|j| format!("f{j}")))
        .collect();
    if header.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
        return Err(DatasetError::Format(format!(
            "csv header must be id,f0..f{}",
            dim.saturating_sub(1)
        )));
    }
    let mut rows = Vec::with_capacity(n);
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != dim + 1 {
            return Err(DatasetError::DimensionMismatch {
                row,
                expected: dim,
                found: record.len().saturating_sub(1),
            });
        }
        let id: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| DatasetError::Format(format!("row {row}: bad id {:?}", &record[0])))?;
        if id != row {
            return Err(DatasetError::InvalidIds(format!("csv row {row} has id {id}")));
        }
        let mut out = Vec::with_capacity(dim);
        for col in 0..dim {
            let raw = record[col + 1].trim();
            let v: f32 = raw.parse().map_err(|_| {
                DatasetError::Format(format!("row {row}, column {col}: bad value {raw:?}"))
            })?;
            if !v.is_finite() {
                return Err(DatasetError::NonFiniteValue { row, col });
            }
            out.push(v as f64);
        }
        rows.push(out);
    }
    if rows.len() != n {
        return Err(DatasetError::Format(format!(
            "embedding file has {} rows, manifest lists {n} instances",
            rows.len()
        )));
    }
    Ok(rows)
}

/// Writes `manifest.json` plus an embedding file into `dir`.
///
/// Embeddings are narrowed to `f32`; datasets whose values are already
/// `f32`-representable (all loaded and generated ones) round-trip exactly.
pub fn write_manifest(
    dataset: &Dataset,
    dir: impl AsRef<Path>,
    format: EmbeddingFormat,
) -> Result<PathBuf, DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let emb_name = match format {
        EmbeddingFormat::Csv => "embeddings.csv",
        EmbeddingFormat::Binary => "embeddings.bin",
    };
    let emb_path = dir.join(emb_name);
    match format {
        EmbeddingFormat::Binary => {
            let mut out = io::BufWriter::new(fs::File::create(&emb_path)?);
            out.write_all(EMBEDDING_MAGIC)?;
            out.write_all(&(dataset.len() as u32).to_le_bytes())?;
            out.write_all(&(dataset.dim() as u32).to_le_bytes())?;
            for v in dataset.embeddings_flat() {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
            out.flush()?;
        }
        EmbeddingFormat::Csv => {
            let mut w = csv::Writer::from_path(&emb_path)?;
            let mut header = vec!["id".to_string()];
            header.extend((0..dataset.dim()).map(|j| format!("f{j}")));
            w.write_record(&header)?;
            for id in dataset.ids() {
                let mut rec = vec![id.to_string()];
                rec.extend(dataset.embedding(id).iter().map(|v| (*v as f32).to_string()));
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
    }

    let manifest = Manifest {
        dim: dataset.dim(),
        class_names: dataset.class_names().to_vec(),
        embeddings: emb_name.to_string(),
        instances: dataset
            .ids()
            .map(|id| ManifestInstance {
                id,
                image: dataset.image_path(id).map(str::to_string),
                truth: dataset.truth(id).map(|c| dataset.class_names()[c].clone()),
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Parameters of a Gaussian-blob dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Per-coordinate standard deviation of each blob.
    pub cluster_spread: f64,
    /// Minimum pairwise distance between class centroids.
    pub class_separation: f64,
    pub seed: u64,
    /// Fraction of each class drawn around a uniformly random class
    /// centroid instead of its own. `1.0` makes location independent of class.
    #[serde(default)]
    pub scatter_fraction: f64,
}

impl SyntheticSpec {
    pub fn blobs(classes: usize, per_class: usize, dim: usize, seed: u64) -> Self {
        Self {
            classes,
            per_class,
            dim,
            cluster_spread: 1.0,
            class_separation: 10.0,
            seed,
            scatter_fraction: 0.0,
        }
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidSpec(m.to_string()));
        if self.classes < 2 {
            return bad("classes must be >= 2");
        }
        if self.per_class < 1 {
            return bad("per_class must be >= 1");
        }
        if self.dim < 2 {
            return bad("dim must be >= 2");
        }
        if !(self.cluster_spread.is_finite() && self.cluster_spread > 0.0) {
            return bad("cluster_spread must be positive");
        }
        if !(self.class_separation.is_finite() && self.class_separation > 0.0) {
            return bad("class_separation must be positive");
        }
        if !(0.0..=1.0).contains(&self.scatter_fraction) {
            return bad("scatter_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    /// Class centroids. When `classes <= dim` they are the scaled vertices
    /// `e_c * sep / sqrt(2)` of a regular simplex (all pairwise distances equal
    /// `sep`); otherwise they sit on an integer lattice with spacing `sep`.
    pub fn centroids(&self) -> Vec<Vec<f64>> {
        let m = self.classes;
        let d = self.dim;
        if m <= d {
            let s = self.class_separation / std::f64::consts::SQRT_2;
            (0..m)
                .map(|c| {
                    let mut v = vec![0.0; d];
                    v[c] = s;
                    v
                })
                .collect()
        } else {
            let side = (1..).find(|s: &usize| s.pow(d as u32) >= m).unwrap_or(m);
            (0..m)
                .map(|c| {
                    let mut v = vec![0.0; d];
                    let mut rem = c;
                    for x in v.iter_mut() {
                        *x = (rem % side) as f64 * self.class_separation;
                        rem /= side;
                    }
                    v
                })
                .collect()
        }
    }
}

/// Generates isotropic Gaussian blobs, one per class. Deterministic per spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, DatasetError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.cluster_spread).expect("validated spread");
    let centroids = spec.centroids();
    let n_scatter = (spec.scatter_fraction * spec.per_class as f64).round() as usize;

    let mut points: Vec<(Vec<f64>, ClassId)> = Vec::with_capacity(spec.classes * spec.per_class);
    for class in 0..spec.classes {
        for j in 0..spec.per_class {
            let anchor = if j < n_scatter {
                rng.random_range(0..spec.classes)
            } else {
                class
            };
            let emb = centroids[anchor]
                .iter()
                // Quantize so the dataset survives an f32 manifest round-trip.
                .map(|c| ((c + noise.sample(&mut rng)) as f32) as f64)
                .collect();
            points.push((emb, class));
        }
    }
    points.shuffle(&mut rng);

    let class_names = (0..spec.classes).map(|c| format!("class_{c}")).collect();
    let instances = points
        .into_iter()
        .enumerate()
        .map(|(id, (embedding, class))| Instance {
            id,
            embedding,
            image_path: None,
            truth_class: Some(class),
        })
        .collect();
    Dataset::new(class_names, instances)
}
