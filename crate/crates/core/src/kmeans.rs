//! Seeded Lloyd's k-means with k-means++ initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::sq_dist;

pub const MAX_ITERATIONS: usize = 50;
pub const DEFAULT_RESTARTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per input point.
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
}

impl Clustering {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }

    /// Index of the point nearest each centroid (ties by lower index).
    pub fn nearest_points(&self, points: &[&[f64]]) -> Vec<usize> {
        self.centroids
            .iter()
            .map(|c| {
                let mut best = (f64::INFINITY, 0);
                for (i, p) in points.iter().enumerate() {
                    let d = sq_dist(p, c);
                    if d < best.0 {
                        best = (d, i);
                    }
                }
                best.1
            })
            .collect()
    }
}

/// Clusters `points` into `k` groups, keeping the lowest-inertia run out
/// of `restarts` seeded k-means++ initializations.
///
/// `k` is clamped to the number of points. Panics on an empty input.
pub fn kmeans(points: &[&[f64]], k: usize, seed: u64, restarts: usize) -> Clustering {
    assert!(!points.is_empty(), "k-means on an empty point set");
    let k = k.clamp(1, points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, plus_plus(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}

fn plus_plus(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        let c = points[next].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &[&[f64]], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let assignment = points
        .iter()
        .map(|p| {
            let mut best = (f64::INFINITY, 0);
            for (j, c) in centroids.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best.0 {
                    best = (d, j);
                }
            }
            inertia += best.0;
            best.1
        })
        .collect();
    (assignment, inertia)
}

fn lloyd(points: &[&[f64]], mut centroids: Vec<Vec<f64>>) -> Clustering {
    let dim = points[0].len();
    let k = centroids.len();
    let (mut assignment, mut inertia) = assign(points, &centroids);
    for _ in 0..MAX_ITERATIONS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // re-seed an empty cluster at the point farthest from its centroid
                let far = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (sq_dist(p, &centroids[assignment[i]]), i))
                    .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
                    .map_or(0, |(_, i)| i);
                centroids[j] = points[far].to_vec();
            } else {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let (next, next_inertia) = assign(points, &centroids);
        let converged = next == assignment;
        assignment = next;
        inertia = next_inertia;
        if converged {
            break;
        }
    }
    Clustering {
        centroids,
        assignment,
        inertia,
    }
}
