//! Model-ready inputs and targets built from player traces.
//!
//! Every statistic that a model could learn from (scaler ranges,
//! vocabularies, per-game inactivity thresholds) is fit on the training users
//! only; test users are transformed with the frozen training statistics.

mod encode;
mod io;
mod targets;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

pub use encode::{ScalerStats, Vocabularies, Vocabulary, OOV_TOKEN};
pub use io::{read_dataset, write_dataset, DatasetManifest};
pub use targets::{churn_probability, compute_targets, inactivity_threshold, quantile_sorted, TargetVector};

use crate::error::{Error, Result};
use crate::seed::mix_seed;
use crate::telemetry::{PlayerTrace, SessionRecord};

pub const BEHAVIOR_NAMES: [&str; 5] = [
    "session_time",
    "play_time",
    "delta_session",
    "activity_index",
    "activity_diversity",
];
pub const BEHAVIOR_DIM: usize = 5;
pub const TARGET_NAMES: [&str; 4] = ["ch", "st", "ss", "ab"];
pub const ENV_NAMES: [&str; 4] = ["hour_idx", "weekday_idx", "yearday_idx", "region_idx"];

/// Index of each target in per-step target arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    Churn = 0,
    SurvivalTime = 1,
    SurvivalSessions = 2,
    Absence = 3,
}

impl Target {
    pub const ALL: [Target; 4] = [
        Target::Churn,
        Target::SurvivalTime,
        Target::SurvivalSessions,
        Target::Absence,
    ];

    pub fn name(self) -> &'static str {
        TARGET_NAMES[self as usize]
    }
}

/// One trace converted to scaled behaviour, encoded context, and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizedTrace {
    pub user_id: String,
    pub game_id: String,
    pub game_idx: usize,
    /// Scaled behavioural metrics per session.
    pub behavior: Vec<[f64; BEHAVIOR_DIM]>,
    /// Encoded (hour, weekday, yearday, region) per session.
    pub env: Vec<[usize; 4]>,
    /// (ch, st, ss, ab) per session; st/ss/ab are scaled.
    pub targets: Vec<[f64; 4]>,
    pub ab_mask: Vec<bool>,
}

impl FeaturizedTrace {
    pub fn len(&self) -> usize {
        self.behavior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.behavior.is_empty()
    }

    /// Whether target `k` contributes to the loss at step `t`.
    pub fn target_valid(&self, t: usize, k: usize) -> bool {
        k != Target::Absence as usize || self.ab_mask[t]
    }
}

/// Statistics fit on the training users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub vocabs: Vocabularies,
    pub behavior_scaler: ScalerStats,
    /// Scaler over (st, ss, ab).
    pub target_scaler: ScalerStats,
    /// Inactivity threshold per game id, plus the pooled fallback.
    pub thresholds: BTreeMap<String, f64>,
    pub fallback_threshold: f64,
    /// Epoch minutes at which inactivity is measured.
    pub observation_end: f64,
}

fn gaps(trace: &PlayerTrace) -> impl Iterator<Item = f64> + '_ {
    trace.sessions.iter().skip(1).map(|s| s.delta_session)
}

impl Preprocessor {
    /// Fits vocabularies, scalers and thresholds on `train` only.
    pub fn fit(train: &[PlayerTrace], observation_end: f64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("no training traces".into()));
        }
        let vocabs = Vocabularies::fit(
            train
                .iter()
                .flat_map(|t| t.sessions.iter().map(|s| s.env.region.as_str())),
            train.iter().map(|t| t.game_id.as_str()),
        );

        let mut per_game: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for t in train {
            per_game.entry(t.game_id.clone()).or_default().extend(gaps(t));
        }
        let pooled: Vec<f64> = per_game.values().flatten().copied().collect();
        let fallback_threshold = inactivity_threshold(&pooled)?;
        let mut thresholds = BTreeMap::new();
        for (game, g) in &per_game {
            let value = if g.is_empty() {
                fallback_threshold
            } else {
                inactivity_threshold(g)?
            };
            thresholds.insert(game.clone(), value);
        }

        let behaviors: Vec<[f64; BEHAVIOR_DIM]> = train
            .iter()
            .flat_map(|t| t.sessions.iter().map(SessionRecord::behavior))
            .collect();
        let behavior_scaler = ScalerStats::fit(BEHAVIOR_DIM, behaviors.iter().map(|r| &r[..]))?;

        let mut target_rows: Vec<[f64; 3]> = Vec::new();
        let mut ab_rows: Vec<f64> = Vec::new();
        for t in train {
            let threshold = thresholds[&t.game_id];
            for y in compute_targets(t, threshold, observation_end) {
                target_rows.push([y.survival_time, y.survival_sessions, 0.0]);
                if y.absence_mask {
                    ab_rows.push(y.absence);
                }
            }
        }
        let mut target_scaler = ScalerStats::fit(3, target_rows.iter().map(|r| &r[..]))?;
        let ab = ScalerStats::fit(1, ab_rows.chunks(1))?;
        target_scaler.min[2] = ab.min[0];
        target_scaler.max[2] = ab.max[0];

        Ok(Preprocessor {
            vocabs,
            behavior_scaler,
            target_scaler,
            thresholds,
            fallback_threshold,
            observation_end,
        })
    }

    pub fn threshold_for(&self, game_id: &str) -> f64 {
        self.thresholds.get(game_id).copied().unwrap_or(self.fallback_threshold)
    }

    pub fn transform(&self, trace: &PlayerTrace) -> FeaturizedTrace {
        let ys = compute_targets(trace, self.threshold_for(&trace.game_id), self.observation_end);
        let v = &self.vocabs;
        let behavior = trace
            .sessions
            .iter()
            .map(|s| {
                let raw = s.behavior();
                std::array::from_fn(|j| self.behavior_scaler.scale(j, raw[j]))
            })
            .collect();
        let env = trace
            .sessions
            .iter()
            .map(|s| {
                [
                    v.hour.encode(&s.env.hour_of_day.to_string()),
                    v.weekday.encode(&s.env.day_of_week.to_string()),
                    v.yearday.encode(&s.env.day_of_year.to_string()),
                    v.region.encode(&s.env.region),
                ]
            })
            .collect();
        let targets = ys
            .iter()
            .map(|y| {
                [
                    y.churn,
                    self.target_scaler.scale(0, y.survival_time),
                    self.target_scaler.scale(1, y.survival_sessions),
                    if y.absence_mask {
                        self.target_scaler.scale(2, y.absence)
                    } else {
                        0.0
                    },
                ]
            })
            .collect();
        FeaturizedTrace {
            user_id: trace.user_id.clone(),
            game_id: trace.game_id.clone(),
            game_idx: v.game.encode(&trace.game_id),
            behavior,
            env,
            targets,
            ab_mask: ys.iter().map(|y| y.absence_mask).collect(),
        }
    }

    /// Maps a scaled behaviour vector back to raw units.
    pub fn unscale_behavior(&self, scaled: &[f64; BEHAVIOR_DIM]) -> [f64; BEHAVIOR_DIM] {
        std::array::from_fn(|j| self.behavior_scaler.unscale(j, scaled[j]))
    }

    /// Maps scaled (ch, st, ss, ab) back to raw units.
    pub fn unscale_targets(&self, scaled: &[f64; 4]) -> [f64; 4] {
        [
            scaled[0],
            self.target_scaler.unscale(0, scaled[1]),
            self.target_scaler.unscale(1, scaled[2]),
            self.target_scaler.unscale(2, scaled[3]),
        ]
    }
}

/// Train/test partition of featurized traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<FeaturizedTrace>,
    pub test: Vec<FeaturizedTrace>,
    pub preprocessor: Preprocessor,
    pub split_seed: u64,
    pub ratio: f64,
}

fn user_hash(seed: u64, user: &str) -> u64 {
    // FNV-1a over the user id, finalized with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in user.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix_seed(seed, h, 0)
}

/// Assigns users to the training side by ranking a seeded hash of their id;
/// exactly `round(ratio * n_users)` users land in training.
pub fn assign_users<'a>(users: impl IntoIterator<Item = &'a str>, ratio: f64, seed: u64) -> Result<HashSet<String>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::validation("ratio", "must lie in (0, 1)"));
    }
    let mut unique: Vec<&str> = users
        .into_iter()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    unique.sort_by_key(|u| (user_hash(seed, u), *u));
    let n_train = (ratio * unique.len() as f64).round() as usize;
    Ok(unique[..n_train].iter().map(|u| u.to_string()).collect())
}

/// Splits traces by user, fits the preprocessor on the training side, and
/// featurizes both sides.
pub fn split_dataset(traces: &[PlayerTrace], ratio: f64, seed: u64, observation_end: f64) -> Result<DatasetSplit> {
    let train_users = assign_users(traces.iter().map(|t| t.user_id.as_str()), ratio, seed)?;
    let (train_raw, test_raw): (Vec<&PlayerTrace>, Vec<&PlayerTrace>) =
        traces.iter().partition(|t| train_users.contains(&t.user_id));
    let train_owned: Vec<PlayerTrace> = train_raw.iter().map(|t| (*t).clone()).collect();
    let preprocessor = Preprocessor::fit(&train_owned, observation_end)?;
    Ok(DatasetSplit {
        train: train_raw.iter().map(|t| preprocessor.transform(t)).collect(),
        test: test_raw.iter().map(|t| preprocessor.transform(t)).collect(),
        preprocessor,
        split_seed: seed,
        ratio,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::telemetry::{simulate_population, GameSpec, PopulationSpec};

    pub(crate) fn small_population(players: usize, seed: u64) -> PopulationSpec {
        PopulationSpec {
            games: (0..3)
                .map(|g| GameSpec {
                    game_id: format!("game{g}"),
                    base_quality: 0.5 + 0.15 * g as f64,
                    quality_drift: -0.01,
                    completion_sessions: if g == 2 { Some(40) } else { None },
                    noise_sd: 0.1,
                })
                .collect(),
            players_per_game: players,
            calendar_start: 26_000_000,
            horizon_days: 60,
            regions: vec!["eu".into(), "na".into(), "jp".into()],
            join_fraction: 0.8,
            initial_salience: (0.3, 0.9),
            learning_rate: (0.05, 0.3),
            env_susceptibility: (0.0, 0.4),
            churn_threshold: (0.15, 0.3),
            seed,
        }
    }

    #[test]
    fn ten_users_split_eight_two() {
        let users: Vec<String> = (0..10).map(|i| format!("user{i}")).collect();
        let a = assign_users(users.iter().map(String::as_str), 0.8, 5).unwrap();
        let b = assign_users(users.iter().map(String::as_str), 0.8, 5).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, b);
        assert!(assign_users(users.iter().map(String::as_str), 1.0, 5).is_err());
    }

    #[test]
    fn large_split_fraction() {
        let users: Vec<String> = (0..10_000).map(|i| format!("u{i}")).collect();
        let a = assign_users(users.iter().map(String::as_str), 0.8, 77).unwrap();
        let frac = a.len() as f64 / 10_000.0;
        assert!((frac - 0.8).abs() <= 0.02);
    }

    #[test]
    fn users_are_disjoint_and_stats_train_only() {
        let pop = small_population(40, 3);
        let traces = simulate_population(&pop).unwrap();
        let end = pop.observation_end() as f64;
        let split = split_dataset(&traces, 0.8, 9, end).unwrap();
        let train: HashSet<_> = split.train.iter().map(|t| &t.user_id).collect();
        assert!(split.test.iter().all(|t| !train.contains(&t.user_id)));

        let train_only: Vec<PlayerTrace> = traces.iter().filter(|t| train.contains(&t.user_id)).cloned().collect();
        let refit = Preprocessor::fit(&train_only, end).unwrap();
        assert_eq!(refit, split.preprocessor);
        for t in split.train.iter().chain(&split.test) {
            assert!(t.targets.windows(2).all(|w| w[1][1] <= w[0][1] && w[1][2] <= w[0][2]));
            let last = t.targets.last().unwrap();
            assert_eq!((last[1], last[2]), (0.0, 0.0));
            assert!(!t.ab_mask.last().unwrap());
            let ch = t.targets[0][0];
            assert!([0.0, 0.5, 1.0].contains(&ch));
            assert!(t.targets.iter().all(|y| y[0] == ch));
            assert!(t.env.iter().all(|e| e[0] < 25 && e[1] < 8 && e[2] < 367));
        }
    }
}
