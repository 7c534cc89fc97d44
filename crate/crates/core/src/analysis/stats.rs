use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::kmeans::sq_dist;
use crate::error::{Error, Result};

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation. `None` for mismatched, short or constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Mean silhouette coefficient over a seeded sample of at most `sample_cap`
/// points. Distances for each sampled point are taken against all points.
pub fn silhouette(vectors: &[Vec<f64>], labels: &[usize], sample_cap: usize, seed: u64) -> Result<f64> {
    if vectors.len() != labels.len() {
        return Err(Error::shape(&[vectors.len()], &[labels.len()], "silhouette labels"));
    }
    let n_labels = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; n_labels];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::validation("labels", "need at least 2 distinct labels"));
    }
    if sample_cap == 0 {
        return Err(Error::validation("sample_cap", "must be positive"));
    }
    let n = vectors.len();
    let chosen: Vec<usize> = if n <= sample_cap {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, n, sample_cap).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut total = 0.0;
    let mut sums = vec![0.0; n_labels];
    for &i in &chosen {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (j, v) in vectors.iter().enumerate() {
            if j != i {
                sums[labels[j]] += sq_dist(&vectors[i], v).sqrt();
            }
        }
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..n_labels)
            .filter(|&l| l != own && sizes[l] > 0)
            .map(|l| sums[l] / sizes[l] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / chosen.len() as f64)
}

/// A `d_in × d_out` matrix with orthonormal columns, from the QR
/// factorization of a Gaussian matrix. Returned row-major as `[d_in][d_out]`.
pub fn random_orthogonal(d_in: usize, d_out: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if d_out == 0 || d_out > d_in {
        return Err(Error::validation("d_out", format!("must be in 1..={d_in}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::<f64>::from_fn(d_in, d_out, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    // sign fix so the factorization is unique
    Ok((0..d_in)
        .map(|i| {
            (0..d_out)
                .map(|j| if r[(j, j)] < 0.0 { -q[(i, j)] } else { q[(i, j)] })
                .collect()
        })
        .collect())
}

/// Projects each row through a `[d_in][d_out]` matrix.
pub fn project(vectors: &[Vec<f64>], basis: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d_out = basis.first().map_or(0, Vec::len);
    vectors
        .iter()
        .map(|v| {
            let mut out = vec![0.0; d_out];
            for (x, row) in v.iter().zip(basis) {
                for (o, b) in out.iter_mut().zip(row) {
                    *o += x * b;
                }
            }
            out
        })
        .collect()
}
