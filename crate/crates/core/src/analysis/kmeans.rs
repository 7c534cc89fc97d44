use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Points that have moved each centroid so far.
    pub counts: Vec<u64>,
    pub seed: u64,
    pub batch_size: usize,
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
pub fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, v);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Sum of squared distances to the nearest centroid.
pub fn inertia(centroids: &[Vec<f64>], vectors: &[Vec<f64>]) -> f64 {
    vectors
        .iter()
        .map(|v| sq_dist(&centroids[nearest(centroids, v)], v))
        .sum()
}

fn check(vectors: &[Vec<f64>], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::validation("k", "must be at least 1"));
    }
    if k > vectors.len() {
        return Err(Error::validation(
            "k",
            format!("{k} clusters requested for {} vectors", vectors.len()),
        ));
    }
    let d = vectors[0].len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::shape(&[bad.len()], &[d], "vectors of unequal width"));
    }
    Ok(())
}

/// Adds centroids by D² sampling until there are `k`.
fn extend_plus_plus(vectors: &[Vec<f64>], centroids: &mut Vec<Vec<f64>>, k: usize, rng: &mut ChaCha8Rng) {
    if centroids.is_empty() {
        centroids.push(vectors[rng.random_range(0..vectors.len())].clone());
    }
    let mut d2: Vec<f64> = vectors
        .iter()
        .map(|v| centroids.iter().map(|c| sq_dist(c, v)).fold(f64::INFINITY, f64::min))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            // every point coincides with a centroid
            centroids.len() % vectors.len()
        };
        let c = vectors[pick].clone();
        for (d, v) in d2.iter_mut().zip(vectors) {
            *d = d.min(sq_dist(&c, v));
        }
        centroids.push(c);
    }
}

/// k-means++ seeding.
pub fn kmeans_plus_plus(vectors: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    check(vectors, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Vec::with_capacity(k);
    extend_plus_plus(vectors, &mut centroids, k, &mut rng);
    Ok(centroids)
}

/// Mini-batch k-means: each iteration samples `batch_size` points, assigns
/// them to their nearest centroid, then moves each centroid toward its
/// points with a per-centroid step of 1/count.
pub fn minibatch_kmeans(
    vectors: &[Vec<f64>],
    k: usize,
    batch_size: usize,
    iterations: usize,
    seed: u64,
) -> Result<KMeansModel> {
    check(vectors, k)?;
    if batch_size == 0 {
        return Err(Error::validation("batch_size", "must be positive"));
    }
    let mut centroids = kmeans_plus_plus(vectors, k, seed)?;
    let mut counts = vec![0u64; k];
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1, 0));
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..iterations {
        batch.clear();
        batch.extend((0..batch_size).map(|_| rng.random_range(0..vectors.len())));
        let assigned: Vec<usize> = batch.iter().map(|&i| nearest(&centroids, &vectors[i])).collect();
        for (&i, &c) in batch.iter().zip(&assigned) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            for (m, x) in centroids[c].iter_mut().zip(&vectors[i]) {
                *m += eta * (x - *m);
            }
        }
    }
    Ok(KMeansModel {
        k,
        centroids,
        counts,
        seed,
        batch_size,
    })
}

/// Full-batch Lloyd iterations from the given centroids. Returns the final
/// centroids and the inertia after every assignment step.
pub fn lloyd(vectors: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = centroids.first().map_or(0, Vec::len);
    let mut history = Vec::new();
    let mut labels: Vec<usize> = vec![usize::MAX; vectors.len()];
    for _ in 0..max_iter {
        let next: Vec<usize> = vectors.iter().map(|v| nearest(&centroids, v)).collect();
        history.push(vectors.iter().zip(&next).map(|(v, &c)| sq_dist(&centroids[c], v)).sum());
        if next == labels {
            break;
        }
        labels = next;
        let mut sums = vec![vec![0.0; d]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (v, &c) in vectors.iter().zip(&labels) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(v) {
                *s += x;
            }
        }
        for (c, (s, n)) in centroids.iter_mut().zip(sums.iter().zip(&counts)) {
            // an emptied cluster keeps its previous centroid
            if *n > 0 {
                for (m, x) in c.iter_mut().zip(s) {
                    *m = x / *n as f64;
                }
            }
        }
    }
    (centroids, history)
}

/// Lloyd's algorithm from k-means++ seeding.
pub fn lloyd_kmeans(vectors: &[Vec<f64>], k: usize, max_iter: usize, seed: u64) -> Result<(KMeansModel, Vec<f64>)> {
    let init = kmeans_plus_plus(vectors, k, seed)?;
    let (centroids, history) = lloyd(vectors, init, max_iter);
    let mut counts = vec![0u64; k];
    for v in vectors {
        counts[nearest(&centroids, v)] += 1;
    }
    Ok((
        KMeansModel {
            k,
            centroids,
            counts,
            seed,
            batch_size: vectors.len(),
        },
        history,
    ))
}

impl KMeansModel {
    pub fn assign(&self, v: &[f64]) -> usize {
        nearest(&self.centroids, v)
    }

    pub fn predict(&self, vectors: &[Vec<f64>]) -> Vec<usize> {
        vectors.iter().map(|v| self.assign(v)).collect()
    }

    pub fn inertia(&self, vectors: &[Vec<f64>]) -> f64 {
        inertia(&self.centroids, vectors)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowReport {
    pub k_values: Vec<usize>,
    pub inertia: Vec<f64>,
    /// Inertia drop from each k to the next one in the list.
    pub marginal_gains: Vec<f64>,
    pub chosen_k: usize,
}

/// Share of the first marginal gain below which adding clusters stops
/// paying off.
pub const ELBOW_GAIN_FRACTION: f64 = 0.1;

const LLOYD_MAX_ITER: usize = 300;
const ELBOW_RESTARTS: u64 = 4;

/// Refits full-batch k-means for every k and picks the smallest k whose
/// marginal inertia reduction is below 10% of the first one.
///
/// Each k is warm-started from the previous solution (plus D²-sampled new
/// centroids) as well as from fresh seeds, keeping the best; this makes the
/// inertia curve non-increasing.
pub fn elbow_select(vectors: &[Vec<f64>], k_range: &[usize], seed: u64) -> Result<ElbowReport> {
    if k_range.is_empty() {
        return Err(Error::validation("k_range", "must not be empty"));
    }
    if k_range[0] == 0 || k_range.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("k_range", "must be ascending and start at 1 or more"));
    }
    let mut inertias = Vec::with_capacity(k_range.len());
    let mut previous: Option<Vec<Vec<f64>>> = None;
    for &k in k_range {
        check(vectors, k)?;
        let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
        let mut consider = |centroids: Vec<Vec<f64>>| {
            let (c, _) = lloyd(vectors, centroids, LLOYD_MAX_ITER);
            let value = inertia(&c, vectors);
            if best.as_ref().is_none_or(|(b, _)| value < *b) {
                best = Some((value, c));
            }
        };
        if let Some(prev) = &previous {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, k as u64, 0));
            let mut warm = prev.clone();
            extend_plus_plus(vectors, &mut warm, k, &mut rng);
            consider(warm);
        }
        for r in 0..ELBOW_RESTARTS {
            consider(kmeans_plus_plus(vectors, k, mix_seed(seed, k as u64, r + 1))?);
        }
        let (value, centroids) = best.expect("at least one candidate");
        inertias.push(value);
        previous = Some(centroids);
    }

    let gains: Vec<f64> = inertias.windows(2).map(|w| w[0] - w[1]).collect();
    let chosen_k = match gains.first() {
        Some(&first) if first > 0.0 => gains
            .iter()
            .position(|&g| g < ELBOW_GAIN_FRACTION * first)
            .map_or(*k_range.last().expect("non-empty"), |i| k_range[i]),
        _ => k_range[0],
    };
    Ok(ElbowReport {
        k_values: k_range.to_vec(),
        inertia: inertias,
        marginal_gains: gains,
        chosen_k,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    /// Gaussian blobs with unit spread around the given centres.
    pub(crate) fn blobs(centres: &[Vec<f64>], per_blob: usize, sd: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sd).unwrap();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (b, c) in centres.iter().enumerate() {
            for _ in 0..per_blob {
                pts.push(c.iter().map(|x| x + noise.sample(&mut rng)).collect());
                labels.push(b);
            }
        }
        (pts, labels)
    }

    #[test]
    fn single_point_is_its_own_centroid() {
        let m = minibatch_kmeans(&[vec![1.5, -2.0]], 1, 4, 10, 0).unwrap();
        assert_eq!(m.centroids, vec![vec![1.5, -2.0]]);
        assert!(minibatch_kmeans(&[vec![1.0]], 2, 4, 10, 0).is_err());
    }

    #[test]
    fn separated_blobs_recover_their_means() {
        let (pts, _) = blobs(&[vec![0.0, 0.0], vec![10.0, 0.0]], 300, 1.0, 1);
        let (lloyd_model, history) = lloyd_kmeans(&pts, 2, 100, 2).unwrap();
        assert!(history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let mb = minibatch_kmeans(&pts, 2, 64, 200, 3).unwrap();
        for c in &mb.centroids {
            let target = &lloyd_model.centroids[nearest(&lloyd_model.centroids, c)];
            assert!(sq_dist(c, target).sqrt() < 0.5, "{c:?} vs {target:?}");
        }
        let (a, b) = (mb.inertia(&pts), lloyd_model.inertia(&pts));
        assert!(a <= b * 1.1, "{a} vs {b}");
    }

    #[test]
    fn assignment_is_the_nearest_centroid() {
        let (pts, _) = blobs(
            &[vec![0.0, 0.0, 0.0], vec![4.0, 1.0, 0.0], vec![0.0, 5.0, 2.0]],
            50,
            1.5,
            4,
        );
        let m = minibatch_kmeans(&pts, 3, 16, 50, 5).unwrap();
        for (v, &a) in pts.iter().zip(&m.predict(&pts)) {
            let brute = (0..3)
                .min_by(|&i, &j| sq_dist(&m.centroids[i], v).total_cmp(&sq_dist(&m.centroids[j], v)))
                .unwrap();
            assert_eq!(a, brute);
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let (pts, _) = blobs(&[vec![0.0, 0.0], vec![3.0, 3.0]], 40, 1.0, 6);
        assert_eq!(
            minibatch_kmeans(&pts, 2, 8, 30, 7).unwrap(),
            minibatch_kmeans(&pts, 2, 8, 30, 7).unwrap()
        );
    }

    #[test]
    fn elbow_finds_planted_blobs() {
        let centres = vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![0.0, 10.0], vec![10.0, 10.0]];
        let (pts, _) = blobs(&centres, 100, 1.0, 8);
        let report = elbow_select(&pts, &[1, 2, 3, 4, 5, 6, 7, 8], 9).unwrap();
        assert!((3..=5).contains(&report.chosen_k), "{report:?}");
        assert!(report.inertia.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn elbow_edge_cases() {
        let (pts, _) = blobs(&[vec![0.0, 0.0]], 6, 1.0, 10);
        assert_eq!(elbow_select(&pts, &[1], 0).unwrap().chosen_k, 1);
        let full = elbow_select(&pts, &[1, 6], 0).unwrap();
        assert_eq!(full.inertia[1], 0.0);
        assert!(elbow_select(&pts, &[], 0).is_err());
        assert!(elbow_select(&pts, &[3, 2], 0).is_err());
    }
}
