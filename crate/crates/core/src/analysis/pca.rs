use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-component principal-axis projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionModel {
    pub mean: Vec<f64>,
    /// Top-2 unit eigenvectors of the covariance, largest first.
    pub axes: [Vec<f64>; 2],
    /// Every covariance eigenvalue, descending.
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: [f64; 2],
}

fn check_rows(vectors: &[Vec<f64>]) -> Result<usize> {
    let d = vectors.first().map_or(0, Vec::len);
    if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::shape(&[bad.len()], &[d], "vectors of unequal width"));
    }
    Ok(d)
}

/// Fits principal axes by symmetric eigendecomposition of the sample
/// covariance (denominator n - 1).
pub fn pca_fit(vectors: &[Vec<f64>]) -> Result<ProjectionModel> {
    let d = check_rows(vectors)?;
    let n = vectors.len();
    if n < 3 {
        return Err(Error::validation("vectors", "need at least 3 vectors"));
    }
    if d < 2 {
        return Err(Error::validation("vectors", "need width at least 2"));
    }
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0; d];
    for v in vectors {
        for j in 0..d {
            centered[j] = v[j] - mean[j];
        }
        for a in 0..d {
            for b in a..d {
                cov[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[(a, b)] /= (n - 1) as f64;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let total: f64 = (0..d).map(|j| cov[(j, j)]).sum();
    if !(total > 0.0) {
        return Err(Error::validation("vectors", "zero variance"));
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axis = |i: usize| {
        let mut v: Vec<f64> = eig.eigenvectors.column(order[i]).iter().copied().collect();
        // fix the sign so the largest-magnitude entry is positive
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eig_total: f64 = eigenvalues.iter().sum();
    Ok(ProjectionModel {
        mean,
        axes: [axis(0), axis(1)],
        explained_variance_ratio: [eigenvalues[0] / eig_total, eigenvalues[1] / eig_total],
        eigenvalues,
    })
}

impl ProjectionModel {
    /// Centered coordinates along the two axes.
    pub fn transform(&self, v: &[f64]) -> Result<[f64; 2]> {
        if v.len() != self.mean.len() {
            return Err(Error::shape(&[v.len()], &[self.mean.len()], "projection input"));
        }
        let coord = |axis: &[f64]| {
            v.iter()
                .zip(&self.mean)
                .zip(axis)
                .map(|((x, m), a)| (x - m) * a)
                .sum::<f64>()
        };
        Ok([coord(&self.axes[0]), coord(&self.axes[1])])
    }
}
