use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{quantile_sorted, FeaturizedTrace, Preprocessor, BEHAVIOR_DIM, BEHAVIOR_NAMES, TARGET_NAMES};

/// z-value of the two-sided 95% normal interval.
pub const Z_95: f64 = 1.96;

/// Mean with a normal-approximation 95% interval. With a single observation
/// the interval collapses to the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl MeanCi {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if values.len() == 1 {
            return Some(Self {
                mean,
                ci_low: mean,
                ci_high: mean,
            });
        }
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let half = Z_95 * var.sqrt() / n.sqrt();
        Some(Self {
            mean,
            ci_low: mean - half,
            ci_high: mean + half,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub count: usize,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            q1: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
            count: sorted.len(),
        })
    }
}

/// Behavioural metrics of every member still active at one session index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    /// 1-based.
    pub session_index: usize,
    pub count: usize,
    /// One entry per behavioural metric, in `BEHAVIOR_NAMES` order.
    pub metrics: Vec<MeanCi>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub cluster: usize,
    pub count: usize,
    pub sessions: Vec<SessionSummary>,
    /// Quartiles of (ch, st, ss, ab) over all member sessions in raw units;
    /// `None` for an empty cluster.
    pub targets: Vec<Option<Quartiles>>,
}

impl ClusterProfile {
    /// Median of target `k`, if the cluster has any valid observation.
    pub fn target_median(&self, k: usize) -> Option<f64> {
        self.targets.get(k).copied().flatten().map(|q| q.median)
    }

    /// Mean of behavioural metric `j` pooled over every member session with
    /// index `1..=upto`.
    pub fn early_mean(&self, j: usize, upto: usize) -> Option<f64> {
        let (mut sum, mut n) = (0.0, 0usize);
        for s in self.sessions.iter().filter(|s| s.session_index <= upto) {
            sum += s.metrics[j].mean * s.count as f64;
            n += s.count;
        }
        (n > 0).then(|| sum / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionProfile {
    pub k: usize,
    pub total: usize,
    pub metric_names: Vec<String>,
    pub target_names: Vec<String>,
    pub clusters: Vec<ClusterProfile>,
}

impl PartitionProfile {
    /// Clusters with the highest and lowest median of target `k`, ignoring
    /// empty clusters. Ties go to the lower cluster index.
    pub fn extreme_clusters(&self, k: usize) -> Option<(usize, usize)> {
        let mut ranked: Vec<(usize, f64)> = self
            .clusters
            .iter()
            .filter_map(|c| c.target_median(k).map(|m| (c.cluster, m)))
            .collect();
        if ranked.is_empty() {
            return None;
        }
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let lo = ranked[0].0;
        let top = ranked.last().expect("non-empty").1;
        let hi = ranked.iter().find(|r| r.1 == top).expect("present").0;
        Some((hi, lo))
    }
}

/// Summarises each cluster's members in raw (unscaled) units.
/// `assignments[i]` is the cluster of `traces[i]`.
pub fn profile_partitions(
    assignments: &[usize],
    traces: &[FeaturizedTrace],
    k: usize,
    preprocessor: &Preprocessor,
) -> Result<PartitionProfile> {
    if assignments.len() != traces.len() {
        return Err(Error::shape(
            &[assignments.len()],
            &[traces.len()],
            "one assignment per trace",
        ));
    }
    if let Some(&bad) = assignments.iter().find(|&&a| a >= k) {
        return Err(Error::IndexOutOfRange {
            what: "cluster".into(),
            index: bad,
            size: k,
        });
    }
    let clusters = (0..k)
        .map(|c| {
            let members: Vec<&FeaturizedTrace> = traces
                .iter()
                .zip(assignments)
                .filter(|(_, &a)| a == c)
                .map(|(t, _)| t)
                .collect();
            let t_max = members.iter().map(|t| t.len()).max().unwrap_or(0);
            let mut per_index: Vec<Vec<[f64; BEHAVIOR_DIM]>> = vec![Vec::new(); t_max];
            let mut targets: [Vec<f64>; 4] = Default::default();
            for t in &members {
                for step in 0..t.len() {
                    per_index[step].push(preprocessor.unscale_behavior(&t.behavior[step]));
                    let raw = preprocessor.unscale_targets(&t.targets[step]);
                    for (kk, values) in targets.iter_mut().enumerate() {
                        if t.target_valid(step, kk) {
                            values.push(raw[kk]);
                        }
                    }
                }
            }
            let sessions = per_index
                .iter()
                .enumerate()
                .map(|(i, rows)| SessionSummary {
                    session_index: i + 1,
                    count: rows.len(),
                    metrics: (0..BEHAVIOR_DIM)
                        .map(|j| {
                            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                            MeanCi::of(&col).expect("every index up to t_max has a member")
                        })
                        .collect(),
                })
                .collect();
            ClusterProfile {
                cluster: c,
                count: members.len(),
                sessions,
                targets: targets.iter().map(|v| Quartiles::of(v)).collect(),
            }
        })
        .collect();
    Ok(PartitionProfile {
        k,
        total: traces.len(),
        metric_names: BEHAVIOR_NAMES.iter().map(|s| s.to_string()).collect(),
        target_names: TARGET_NAMES.iter().map(|s| s.to_string()).collect(),
        clusters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::test_support::small_split;

    #[test]
    fn interval_conventions() {
        let one = MeanCi::of(&[2.5]).unwrap();
        assert_eq!((one.ci_low, one.mean, one.ci_high), (2.5, 2.5, 2.5));
        let m = MeanCi::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let half = 1.96 * (5.0f64 / 3.0).sqrt() / 2.0;
        assert!((m.ci_high - 2.5 - half).abs() < 1e-12);
        assert!((2.5 - m.ci_low - half).abs() < 1e-12);
        assert!(MeanCi::of(&[]).is_none());
        let q = Quartiles::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (2.0, 3.0, 4.0));
    }

    #[test]
    fn counts_partition_the_users() {
        let split = small_split(30, 2);
        let assignments: Vec<usize> = (0..split.train.len()).map(|i| i % 3).collect();
        let p = profile_partitions(&assignments, &split.train, 4, &split.preprocessor).unwrap();
        assert_eq!(p.clusters.iter().map(|c| c.count).sum::<usize>(), split.train.len());
        let empty = &p.clusters[3];
        assert_eq!(empty.count, 0);
        assert!(empty.sessions.is_empty());
        assert!(empty.targets.iter().all(Option::is_none));
        for c in &p.clusters[..3] {
            assert_eq!(c.sessions[0].count, c.count);
            assert!(c.sessions.windows(2).all(|w| w[1].count <= w[0].count));
        }
    }

    #[test]
    fn single_member_cluster_reports_raw_values() {
        let split = small_split(10, 3);
        let mut assignments = vec![0; split.train.len()];
        assignments[0] = 1;
        let p = profile_partitions(&assignments, &split.train, 2, &split.preprocessor).unwrap();
        let lone = &p.clusters[1];
        let raw = split.preprocessor.unscale_behavior(&split.train[0].behavior[0]);
        let first = &lone.sessions[0].metrics;
        for j in 0..BEHAVIOR_DIM {
            assert!((first[j].mean - raw[j]).abs() < 1e-9);
            assert_eq!(first[j].ci_low, first[j].ci_high);
        }
        assert!(lone.early_mean(0, 1).is_some());
    }

    #[test]
    fn invalid_assignments_error() {
        let split = small_split(10, 4);
        assert!(profile_partitions(&[0], &split.train, 1, &split.preprocessor).is_err());
        let too_big = vec![5; split.train.len()];
        assert!(profile_partitions(&too_big, &split.train, 2, &split.preprocessor).is_err());
    }

    #[test]
    fn extremes_skip_empty_clusters() {
        let mk = |cluster, median: Option<f64>| ClusterProfile {
            cluster,
            count: median.map_or(0, |_| 1),
            sessions: vec![],
            targets: vec![
                None,
                None,
                median.map(|m| Quartiles {
                    q1: m,
                    median: m,
                    q3: m,
                    count: 1,
                }),
                None,
            ],
        };
        let p = PartitionProfile {
            k: 3,
            total: 2,
            metric_names: vec![],
            target_names: vec![],
            clusters: vec![mk(0, Some(2.0)), mk(1, None), mk(2, Some(7.0))],
        };
        assert_eq!(p.extreme_clusters(2), Some((2, 0)));
    }
}
