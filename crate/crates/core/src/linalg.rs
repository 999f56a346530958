//! Small dense helpers shared by the distance-based modules.

use nalgebra::{DMatrix, SymmetricEigen};

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Projects the rows of `rows` (each of length `dim`) onto their top
/// `k` principal components.
///
/// Components are ordered by decreasing variance. Each component's sign is
/// fixed so that its largest-magnitude loading is positive.
pub(crate) fn pca(rows: &[&[f64]], dim: usize, k: usize) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered = DMatrix::from_fn(n, dim, |i, j| rows[i][j] - mean[j]);
    let cov = centered.transpose() * &centered;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    for &col in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
    }
    // Fewer dims than requested components: pad with zero axes.
    while components.len() < k {
        components.push(vec![0.0; dim]);
    }

    (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| c.iter().enumerate().map(|(j, w)| w * centered[(i, j)]).sum())
                .collect()
        })
        .collect()
}
