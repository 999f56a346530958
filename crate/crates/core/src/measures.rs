//! Per-instance property measures and class-level labeling statistics.
//!
//! Every measure is oriented so that small values mark prototypical,
//! confidently predicted or well-covered instances; the property view reads
//! the left side of its density plot as "safe to batch label".
//! All distances are Euclidean in embedding space and neighbor search is
//! exhaustive.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::ProbMatrix;
use crate::dataset::Dataset;
use crate::linalg::{dist, sq_dist};
use crate::workflow::{LabelStatus, LabelStore};
use crate::{ClassId, InstanceId};

/// Neighbor count used by density and disagreement unless overridden.
pub const DEFAULT_K: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error("min-margin needs at least 2 classes")]
    TooFewClasses,
    #[error("class {0} has no labeled instances to compare against")]
    NoLabeledReference(ClassId),
    #[error("neighbor set too small")]
    SetTooSmall,
    #[error("no labeled instances")]
    NoLabels,
    #[error("no neighbors to compare against")]
    DegenerateNeighborhood,
    #[error("no prediction for instance {0}")]
    MissingPrediction(InstanceId),
    #[error("unknown instance id {0}")]
    UnknownId(InstanceId),
    #[error("unknown measure kind {0:?}")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    /// `1 − (p₁ − p₂)`; 0 is a fully confident prediction.
    MinMargin,
    /// Distance to the centroid of the focus class's labeled instances.
    Eccentricity,
    /// Mean distance to the k nearest candidates; small is dense.
    Density,
    /// `d_same / (d_same + d_other)`; below 0.5 is inside the predicted class.
    Border,
    /// Distance to the nearest labeled instance; large is uncovered.
    Coverage,
    /// Normalised entropy of neighbor predictions; 0 is unanimous.
    Disagreement,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 6] = [
        MeasureKind::MinMargin,
        MeasureKind::Eccentricity,
        MeasureKind::Density,
        MeasureKind::Border,
        MeasureKind::Coverage,
        MeasureKind::Disagreement,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MeasureKind::MinMargin => "min_margin",
            MeasureKind::Eccentricity => "eccentricity",
            MeasureKind::Density => "density",
            MeasureKind::Border => "border",
            MeasureKind::Coverage => "coverage",
            MeasureKind::Disagreement => "disagreement",
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MeasureKind {
    type Err = MeasureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace(['-', ' '], "_");
        Ok(match norm.as_str() {
            "min_margin" | "minmargin" | "uncertainty" => MeasureKind::MinMargin,
            "eccentricity" | "centrality" => MeasureKind::Eccentricity,
            "density" => MeasureKind::Density,
            "border" => MeasureKind::Border,
            "coverage" | "coverage_gap" => MeasureKind::Coverage,
            "disagreement" => MeasureKind::Disagreement,
            _ => return Err(MeasureError::UnknownKind(s.to_string())),
        })
    }
}

/// Values of one measure for a focus class, keyed by instance id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureVector {
    pub kind: MeasureKind,
    pub focus_class: ClassId,
    pub values: BTreeMap<InstanceId, f64>,
}

impl MeasureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Ids ordered by ascending value, ties by id.
    pub fn ascending(&self) -> Vec<(InstanceId, f64)> {
        let mut v: Vec<_> = self.values.iter().map(|(&i, &x)| (i, x)).collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: ClassId,
    /// Unlabeled instances whose argmax prediction is this class.
    pub predicted_unlabeled: usize,
    pub batch_labeled: usize,
    pub manually_labeled: usize,
    /// `predicted_unlabeled / max(1, batch + manual)`.
    pub unlabeled_ratio: f64,
}

pub fn min_margin(row: &[f64]) -> Result<f64, MeasureError> {
    if row.len() < 2 {
        return Err(MeasureError::TooFewClasses);
    }
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in row {
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    }
    Ok((1.0 - (first - second)).clamp(0.0, 1.0))
}

fn labeled_centroid(
    focus: ClassId,
    dataset: &Dataset,
    labels: &LabelStore,
) -> Result<Vec<f64>, MeasureError> {
    let mut centroid = vec![0.0; dataset.dim()];
    let mut count = 0usize;
    for (id, s) in labels.statuses().iter().enumerate() {
        if s.class() == Some(focus) {
            for (c, v) in centroid.iter_mut().zip(dataset.embedding(id)) {
                *c += v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(MeasureError::NoLabeledReference(focus));
    }
    centroid.iter_mut().for_each(|c| *c /= count as f64);
    Ok(centroid)
}

/// Distance from `id` to the centroid of all instances labeled `focus`.
pub fn eccentricity(
    id: InstanceId,
    focus: ClassId,
    dataset: &Dataset,
    labels: &LabelStore,
) -> Result<f64, MeasureError> {
    check_id(id, dataset)?;
    let centroid = labeled_centroid(focus, dataset, labels)?;
    Ok(dist(dataset.embedding(id), &centroid))
}

/// Mean distance from `id` to its `k` nearest members of `candidates`
/// (itself excluded). `k` is clamped to the available neighbor count.
pub fn density(
    id: InstanceId,
    candidates: &[InstanceId],
    k: usize,
    dataset: &Dataset,
) -> Result<f64, MeasureError> {
    check_id(id, dataset)?;
    let x = dataset.embedding(id);
    let mut d: Vec<f64> = candidates
        .iter()
        .filter(|&&j| j != id)
        .map(|&j| dist(x, dataset.embedding(j)))
        .collect();
    mean_of_k_smallest(&mut d, k)
}

fn mean_of_k_smallest(d: &mut [f64], k: usize) -> Result<f64, MeasureError> {
    if d.is_empty() || k == 0 {
        return Err(MeasureError::SetTooSmall);
    }
    let k = k.min(d.len());
    d.sort_by(f64::total_cmp);
    Ok(d[..k].iter().sum::<f64>() / k as f64)
}

/// `d_same / (d_same + d_other)` over the whole dataset, where the two
/// distances go to the nearest instance predicted as the same / a
/// different class than `id`.
///
/// Returns 0 when every instance shares one predicted class and 1 when no
/// other instance shares `id`'s prediction.
pub fn border(id: InstanceId, dataset: &Dataset, predicted: &[ClassId]) -> Result<f64, MeasureError> {
    check_id(id, dataset)?;
    if dataset.len() < 2 {
        return Err(MeasureError::DegenerateNeighborhood);
    }
    let x = dataset.embedding(id);
    let own = predicted[id];
    let (mut d_same, mut d_other) = (f64::INFINITY, f64::INFINITY);
    for j in dataset.ids() {
        if j == id {
            continue;
        }
        let d = sq_dist(x, dataset.embedding(j));
        if predicted[j] == own {
            d_same = d_same.min(d);
        } else {
            d_other = d_other.min(d);
        }
    }
    Ok(border_ratio(d_same.sqrt(), d_other.sqrt()))
}

fn border_ratio(d_same: f64, d_other: f64) -> f64 {
    if d_other.is_infinite() {
        0.0
    } else if d_same.is_infinite() {
        1.0
    } else if d_same == 0.0 {
        0.0
    } else {
        d_same / (d_same + d_other)
    }
}

/// Distance to the nearest labeled instance of any class.
pub fn coverage_gap(id: InstanceId, labels: &LabelStore, dataset: &Dataset) -> Result<f64, MeasureError> {
    check_id(id, dataset)?;
    let x = dataset.embedding(id);
    labels
        .statuses()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_labeled())
        .map(|(j, _)| sq_dist(x, dataset.embedding(j)))
        .min_by(f64::total_cmp)
        .map(f64::sqrt)
        .ok_or(MeasureError::NoLabels)
}

/// Normalised entropy `H / ln(min(k, m))` of the predicted classes among
/// the `k` nearest neighbors of `id` (whole dataset, itself excluded).
pub fn disagreement(
    id: InstanceId,
    k: usize,
    predicted: &[ClassId],
    classes: usize,
    dataset: &Dataset,
) -> Result<f64, MeasureError> {
    check_id(id, dataset)?;
    let x = dataset.embedding(id);
    let mut neigh: Vec<(f64, InstanceId)> = dataset
        .ids()
        .filter(|&j| j != id)
        .map(|j| (sq_dist(x, dataset.embedding(j)), j))
        .collect();
    if neigh.is_empty() || k == 0 {
        return Err(MeasureError::SetTooSmall);
    }
    let k = k.min(neigh.len());
    neigh.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut counts = vec![0usize; classes];
    for &(_, j) in &neigh[..k] {
        counts[predicted[j]] += 1;
    }
    Ok(normalised_entropy(&counts, k, classes))
}

fn normalised_entropy(counts: &[usize], k: usize, classes: usize) -> f64 {
    let support = k.min(classes);
    if support < 2 {
        return 0.0;
    }
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / k as f64;
            -p * p.ln()
        })
        .sum();
    (h / (support as f64).ln()).clamp(0.0, 1.0)
}

/// Per-class counts of predicted-unlabeled, batch and manual instances.
pub fn class_stats(labels: &LabelStore, probs: &ProbMatrix) -> Vec<ClassStats> {
    let m = labels.class_count();
    let mut stats: Vec<ClassStats> = (0..m)
        .map(|class| ClassStats {
            class,
            predicted_unlabeled: 0,
            batch_labeled: 0,
            manually_labeled: 0,
            unlabeled_ratio: 0.0,
        })
        .collect();
    for (id, s) in labels.statuses().iter().enumerate() {
        match *s {
            LabelStatus::Manual(c) => stats[c].manually_labeled += 1,
            LabelStatus::Batch(c) => stats[c].batch_labeled += 1,
            LabelStatus::Unlabeled => {
                if let Some(c) = probs.argmax(id) {
                    stats[c].predicted_unlabeled += 1;
                }
            }
        }
    }
    for s in &mut stats {
        s.unlabeled_ratio =
            s.predicted_unlabeled as f64 / (s.batch_labeled + s.manually_labeled).max(1) as f64;
    }
    stats
}

fn check_id(id: InstanceId, dataset: &Dataset) -> Result<(), MeasureError> {
    if id < dataset.len() {
        Ok(())
    } else {
        Err(MeasureError::UnknownId(id))
    }
}

/// Argmax class of every instance; errors if any instance lacks a row.
pub fn predicted_classes(probs: &ProbMatrix, n: usize) -> Result<Vec<ClassId>, MeasureError> {
    (0..n)
        .map(|id| probs.argmax(id).ok_or(MeasureError::MissingPrediction(id)))
        .collect()
}

/// Inputs shared by all measures.
#[derive(Clone, Copy)]
pub struct MeasureContext<'a> {
    pub dataset: &'a Dataset,
    pub labels: &'a LabelStore,
    pub probs: &'a ProbMatrix,
    pub k: usize,
}

/// Evaluates `kind` for every id in `ids` with `focus` as focus class.
///
/// Density uses `ids` itself as the candidate set.
pub fn compute(
    kind: MeasureKind,
    focus: ClassId,
    ids: &[InstanceId],
    ctx: MeasureContext<'_>,
) -> Result<MeasureVector, MeasureError> {
    let ds = ctx.dataset;
    let mut values = BTreeMap::new();
    match kind {
        MeasureKind::MinMargin => {
            for &id in ids {
                let row = ctx.probs.row(id).ok_or(MeasureError::MissingPrediction(id))?;
                values.insert(id, min_margin(row)?);
            }
        }
        MeasureKind::Eccentricity => {
            let centroid = labeled_centroid(focus, ds, ctx.labels)?;
            for &id in ids {
                check_id(id, ds)?;
                values.insert(id, dist(ds.embedding(id), &centroid));
            }
        }
        MeasureKind::Density => {
            for &id in ids {
                values.insert(id, density(id, ids, ctx.k, ds)?);
            }
        }
        MeasureKind::Border => {
            let predicted = predicted_classes(ctx.probs, ds.len())?;
            for &id in ids {
                values.insert(id, border(id, ds, &predicted)?);
            }
        }
        MeasureKind::Coverage => {
            let labeled: Vec<InstanceId> = ctx
                .labels
                .statuses()
                .iter()
                .enumerate()
                .filter(|(_, s)| s.is_labeled())
                .map(|(i, _)| i)
                .collect();
            if labeled.is_empty() {
                return Err(MeasureError::NoLabels);
            }
            for &id in ids {
                check_id(id, ds)?;
                let x = ds.embedding(id);
                let best = labeled
                    .iter()
                    .map(|&j| sq_dist(x, ds.embedding(j)))
                    .fold(f64::INFINITY, f64::min);
                values.insert(id, best.sqrt());
            }
        }
        MeasureKind::Disagreement => {
            let predicted = predicted_classes(ctx.probs, ds.len())?;
            for &id in ids {
                values.insert(id, disagreement(id, ctx.k, &predicted, ctx.probs.classes(), ds)?);
            }
        }
    }
    Ok(MeasureVector {
        kind,
        focus_class: focus,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Instance;

    fn points(pts: &[[f64; 2]]) -> Dataset {
        Dataset::new(
            vec!["a".into(), "b".into(), "c".into()],
            pts.iter()
                .enumerate()
                .map(|(id, p)| Instance {
                    id,
                    embedding: p.to_vec(),
                    image_path: None,
                    truth_class: None,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn min_margin_examples() {
        assert_eq!(min_margin(&[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(min_margin(&[0.5, 0.5]).unwrap(), 1.0);
        assert!((min_margin(&[0.6, 0.3, 0.1]).unwrap() - 0.7).abs() < 1e-12);
        assert!((min_margin(&[0.1, 0.3, 0.6]).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(min_margin(&[1.0]), Err(MeasureError::TooFewClasses));
    }

    #[test]
    fn eccentricity_examples() {
        let ds = points(&[[0.0, 0.0], [3.0, 4.0], [2.0, 2.0], [4.0, 0.0]]);
        let mut labels = LabelStore::new(4, 3);
        assert_eq!(
            eccentricity(1, 0, &ds, &labels),
            Err(MeasureError::NoLabeledReference(0))
        );
        labels.label_instance(0, 0).unwrap();
        assert!((eccentricity(1, 0, &ds, &labels).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(eccentricity(0, 0, &ds, &labels).unwrap(), 0.0);
        // batch labels count as reference too
        labels.label_batch(&[3], 0).unwrap();
        assert!((eccentricity(2, 0, &ds, &labels).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn density_examples() {
        let ds = points(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.0, 0.0]]);
        assert!((density(1, &[0, 1, 2], 2, &ds).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(density(2, &[2, 3], 1, &ds).unwrap(), 0.0);
        assert_eq!(density(0, &[0], 1, &ds), Err(MeasureError::SetTooSmall));
        // k clamps to the available neighbors
        assert!((density(0, &[0, 1, 2], 10, &ds).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn border_examples() {
        let ds = points(&[[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]]);
        // same-class neighbor at 1, other-class neighbor at 1
        assert_eq!(border(1, &ds, &[0, 0, 1, 1]).unwrap(), 0.5);
        // other-class duplicate point
        assert_eq!(border(0, &ds, &[0, 0, 1, 1]).unwrap(), 1.0);
        // duplicate point with the same prediction
        assert_eq!(border(0, &ds, &[0, 1, 1, 0]).unwrap(), 0.0);
        // unanimous predictions
        assert_eq!(border(1, &ds, &[2, 2, 2, 2]).unwrap(), 0.0);
        // singleton prediction
        assert_eq!(border(1, &ds, &[0, 1, 0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn coverage_examples() {
        let ds = points(&[[0.0, 0.0], [0.0, 2.0], [5.0, 5.0]]);
        let mut labels = LabelStore::new(3, 3);
        assert_eq!(coverage_gap(1, &labels, &ds), Err(MeasureError::NoLabels));
        labels.label_instance(0, 1).unwrap();
        assert_eq!(coverage_gap(0, &labels, &ds).unwrap(), 0.0);
        assert_eq!(coverage_gap(1, &labels, &ds).unwrap(), 2.0);
    }

    #[test]
    fn disagreement_examples() {
        let ds = points(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0], [10.0, 0.0]]);
        // neighbors of 0 with k=2 are 1 and 2
        assert_eq!(disagreement(0, 2, &[0, 1, 1, 0, 0, 0], 3, &ds).unwrap(), 0.0);
        assert!((disagreement(0, 2, &[0, 1, 2, 0, 0, 0], 3, &ds).unwrap() - 1.0).abs() < 1e-12);
        // k=4 with counts (2,1,1)
        let v = disagreement(0, 4, &[0, 0, 0, 1, 2, 0], 3, &ds).unwrap();
        let h = -(0.5f64 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
        assert!((v - h / 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn class_stats_examples() {
        let probs = ProbMatrix::from_rows(&vec![vec![0.5, 0.5]; 6]);
        let labels = LabelStore::new(6, 2);
        let stats = class_stats(&labels, &probs);
        assert!(stats.iter().all(|s| s.batch_labeled == 0 && s.manually_labeled == 0));
        assert_eq!(stats.iter().map(|s| s.predicted_unlabeled).sum::<usize>(), 6);

        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| if i == 0 { vec![0.1, 0.9] } else { vec![0.9, 0.1] })
            .collect();
        let probs = ProbMatrix::from_rows(&rows);
        let mut labels = LabelStore::new(6, 2);
        labels.label_instance(0, 1).unwrap();
        let stats = class_stats(&labels, &probs);
        assert_eq!(stats[0].predicted_unlabeled, 5);
        assert_eq!(stats[0].unlabeled_ratio, 5.0);
        assert_eq!(stats[1].unlabeled_ratio, 0.0);
    }

    #[test]
    fn kind_names_parse_back() {
        for k in MeasureKind::ALL {
            assert_eq!(k.as_str().parse::<MeasureKind>().unwrap(), k);
        }
        assert!("nonsense".parse::<MeasureKind>().is_err());
    }
}
