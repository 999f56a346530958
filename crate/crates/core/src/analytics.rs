//! Numeric backends of the property and similarity views: a log-domain
//! KDE over measure values, threshold selection, and 2D projections
//! (exact t-SNE or PCA) of a focus subset.

use std::collections::BTreeMap;
use std::ops::ControlFlow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::linalg::{pca, sq_dist};
use crate::measures::MeasureVector;
use crate::InstanceId;

pub const KDE_GRID_POINTS: usize = 200;
pub const KDE_EPSILON: f64 = 1e-9;
/// Bandwidth used for the single-spike curve of all-identical values.
pub const DEGENERATE_BANDWIDTH: f64 = 1e-3;

pub const TSNE_ITERATIONS: usize = 500;
pub const TSNE_PROGRESS_EVERY: usize = 50;
const EXAGGERATION: f64 = 12.0;
const EXAGGERATION_ITERATIONS: usize = 100;
const MOMENTUM_SWITCH: usize = 250;
const KL_TAIL: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("KDE needs at least 2 values, got {0}")]
    TooFewValues(usize),
    #[error("bandwidth must be positive and finite")]
    InvalidBandwidth,
    #[error("non-finite measure value")]
    NonFinite,
    #[error("{method:?} needs at least {needed} points, got {got}")]
    TooFewPoints {
        method: ProjectionMethod,
        needed: usize,
        got: usize,
    },
    #[error("unknown instance id {0}")]
    UnknownId(InstanceId),
    #[error("projection cancelled")]
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    /// Increasing points in the `log10(v + epsilon)` domain.
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    pub epsilon: f64,
    /// All inputs were identical; the curve is a fixed-width spike.
    pub degenerate: bool,
}

impl KdeCurve {
    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0)
        .sum()
}

pub fn log_transform(v: f64) -> f64 {
    (v + KDE_EPSILON).log10()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule `0.9 · min(σ, IQR/1.34) · n^(-1/5)`. Falls back to σ
/// when the IQR vanishes; returns 0 only for constant input.
pub fn silverman_bandwidth(t: &[f64]) -> f64 {
    let n = t.len() as f64;
    let mean = t.iter().sum::<f64>() / n;
    let sd = (t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = t.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian density estimate at `x` from samples `t` with bandwidth `h`.
pub fn kernel_sum(t: &[f64], h: f64, x: f64) -> f64 {
    let norm = 1.0 / (t.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    norm * t.iter().map(|ti| (-0.5 * ((x - ti) / h).powi(2)).exp()).sum::<f64>()
}

/// Gaussian KDE of `values` on a fixed log10 grid.
///
/// The grid spans the transformed range padded by three bandwidths. When
/// the grid is too coarse for the bandwidth the density is rescaled so the
/// trapezoidal integral is one.
pub fn kde_values(values: &[f64], bandwidth: Option<f64>) -> Result<KdeCurve, AnalyticsError> {
    if values.len() < 2 {
        return Err(AnalyticsError::TooFewValues(values.len()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AnalyticsError::NonFinite);
    }
    if let Some(h) = bandwidth {
        if !(h.is_finite() && h > 0.0) {
            return Err(AnalyticsError::InvalidBandwidth);
        }
    }
    let mut t: Vec<f64> = values.iter().map(|&v| log_transform(v)).collect();
    t.sort_by(f64::total_cmp);
    let (lo, hi) = t
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let degenerate = lo == hi;
    let h = match bandwidth {
        _ if degenerate => DEGENERATE_BANDWIDTH,
        Some(h) => h,
        None => silverman_bandwidth(&t),
    };
    let (start, end) = (lo - 3.0 * h, hi + 3.0 * h);
    let step = (end - start) / (KDE_GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..KDE_GRID_POINTS).map(|i| start + step * i as f64).collect();
    let mut density: Vec<f64> = grid.iter().map(|&x| kernel_sum(&t, h, x)).collect();
    let area = trapezoid(&grid, &density);
    if (area - 1.0).abs() > 0.01 && area > 0.0 {
        density.iter_mut().for_each(|d| *d /= area);
    }
    Ok(KdeCurve {
        grid,
        density,
        bandwidth: h,
        epsilon: KDE_EPSILON,
        degenerate,
    })
}

pub fn kde(values: &MeasureVector, bandwidth: Option<f64>) -> Result<KdeCurve, AnalyticsError> {
    let v: Vec<f64> = values.values.values().copied().collect();
    kde_values(&v, bandwidth)
}

/// Ids whose value is at most `t`, ascending.
pub fn threshold_select(values: &MeasureVector, t: f64) -> Vec<InstanceId> {
    values
        .values
        .iter()
        .filter(|(_, &v)| v <= t)
        .map(|(&id, _)| id)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMethod {
    Tsne,
    Pca,
}

impl std::str::FromStr for ProjectionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "tsne" => Ok(Self::Tsne),
            "pca" => Ok(Self::Pca),
            _ => Err(format!("unknown projection method {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub coords: BTreeMap<InstanceId, [f64; 2]>,
    pub method: ProjectionMethod,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perplexity: Option<f64>,
    /// `(iteration, KL divergence)` at each progress report and over the
    /// final iterations.
    #[serde(skip)]
    pub kl_trace: Vec<(usize, f64)>,
}

pub fn default_perplexity(n: usize) -> f64 {
    30.0_f64.min((n as f64 - 1.0) / 3.0)
}

/// Projects `ids` with `method`. t-SNE uses the default schedule.
pub fn project(
    ids: &[InstanceId],
    dataset: &Dataset,
    method: ProjectionMethod,
    seed: u64,
) -> Result<Projection2D, AnalyticsError> {
    project_with(ids, dataset, method, seed, |_, _| ControlFlow::Continue(()))
}

/// Like [`project`], reporting `(iteration, kl)` every 50 t-SNE
/// iterations; returning `Break` cancels.
pub fn project_with(
    ids: &[InstanceId],
    dataset: &Dataset,
    method: ProjectionMethod,
    seed: u64,
    progress: impl FnMut(usize, f64) -> ControlFlow<()>,
) -> Result<Projection2D, AnalyticsError> {
    if let Some(&bad) = ids.iter().find(|&&id| id >= dataset.len()) {
        return Err(AnalyticsError::UnknownId(bad));
    }
    let needed = match method {
        ProjectionMethod::Tsne => 3,
        ProjectionMethod::Pca => 2,
    };
    if ids.len() < needed {
        return Err(AnalyticsError::TooFewPoints {
            method,
            needed,
            got: ids.len(),
        });
    }
    let rows: Vec<&[f64]> = ids.iter().map(|&id| dataset.embedding(id)).collect();
    let pcs = pca(&rows, dataset.dim(), 2);
    let (points, iterations, perplexity, kl_trace) = match method {
        ProjectionMethod::Pca => (pcs, None, None, Vec::new()),
        ProjectionMethod::Tsne => {
            let perplexity = default_perplexity(ids.len());
            let run = tsne(&rows, &pcs, perplexity, TSNE_ITERATIONS, seed, progress)?;
            (run.0, Some(TSNE_ITERATIONS), Some(perplexity), run.1)
        }
    };
    Ok(Projection2D {
        coords: ids.iter().copied().zip(points.into_iter().map(|p| [p[0], p[1]])).collect(),
        method,
        seed,
        iterations,
        perplexity,
        kl_trace,
    })
}

/// Row-conditional affinities with per-row precision found by bisection so
/// that each row's entropy equals `ln(perplexity)`.
fn conditional_affinities(d2: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &d2[i * n..(i + 1) * n];
        let dmin = (0..n)
            .filter(|&j| j != i)
            .map(|j| row[j])
            .fold(f64::INFINITY, f64::min);
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        let mut probs = vec![0.0; n];
        for _ in 0..100 {
            let mut sum = 0.0;
            for j in 0..n {
                probs[j] = if j == i { 0.0 } else { (-(row[j] - dmin) * beta).exp() };
                sum += probs[j];
            }
            let mut h = 0.0;
            for j in 0..n {
                if j != i {
                    probs[j] /= sum;
                    if probs[j] > 0.0 {
                        h -= probs[j] * probs[j].ln();
                    }
                }
            }
            if (h - target).abs() < 1e-5 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        p[i * n..(i + 1) * n].copy_from_slice(&probs);
    }
    p
}

type TsneRun = (Vec<Vec<f64>>, Vec<(usize, f64)>);

/// Exact t-SNE. Each iteration computes the full O(n²) gradient.
fn tsne(
    rows: &[&[f64]],
    init: &[Vec<f64>],
    perplexity: f64,
    iterations: usize,
    seed: u64,
    mut progress: impl FnMut(usize, f64) -> ControlFlow<()>,
) -> Result<TsneRun, AnalyticsError> {
    let n = rows.len();
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(rows[i], rows[j]);
            d2[i * n + j] = d;
            d2[j * n + i] = d;
        }
    }
    let cond = conditional_affinities(&d2, n, perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }

    let sd = {
        let mean = init.iter().map(|r| r[0]).sum::<f64>() / n as f64;
        (init.iter().map(|r| (r[0] - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let scale = if sd > 0.0 { 1e-4 / sd } else { 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y: Vec<f64> = init
        .iter()
        .flat_map(|r| [r[0], r[1]])
        .map(|v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v * scale + 1e-6 * z
        })
        .collect();
    let learning_rate = (n as f64 / EXAGGERATION / 4.0).max(50.0);
    let mut velocity = vec![0.0; 2 * n];
    let mut gains = vec![1.0_f64; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; 2 * n];
    let mut trace = Vec::new();

    for it in 0..iterations {
        let exaggeration = if it < EXAGGERATION_ITERATIONS { EXAGGERATION } else { 1.0 };
        let momentum = if it < MOMENTUM_SWITCH { 0.5 } else { 0.8 };
        let mut sum_num = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                sum_num += 2.0 * q;
            }
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let m = 4.0 * (exaggeration * p[i * n + j] - w / sum_num) * w;
                grad[2 * i] += m * (y[2 * i] - y[2 * j]);
                grad[2 * i + 1] += m * (y[2 * i + 1] - y[2 * j + 1]);
            }
        }
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (velocity[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(0.01)
            };
            velocity[k] = momentum * velocity[k] - learning_rate * gains[k] * grad[k];
            y[k] += velocity[k];
        }
        for axis in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + axis]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + axis] -= mean);
        }

        let done = it + 1;
        let report = done % TSNE_PROGRESS_EVERY == 0;
        if report || done + KL_TAIL > iterations {
            let kl = kl_divergence(&p, &y, n);
            trace.push((done, kl));
            if report && progress(done, kl).is_break() {
                return Err(AnalyticsError::Cancelled);
            }
        }
    }
    let coords = y.chunks_exact(2).map(|c| c.to_vec()).collect();
    Ok((coords, trace))
}

fn kl_divergence(p: &[f64], y: &[f64], n: usize) -> f64 {
    let mut sum_num = 0.0;
    let mut num = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                num[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
                sum_num += num[i * n + j];
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let pij = p[i * n + j];
                let qij = (num[i * n + j] / sum_num).max(1e-300);
                kl += pij * (pij / qij).ln();
            }
        }
    }
    kl
}
