//! Synthetic telemetry from an explicit incentive-salience process.
//!
//! Each session yields a latent reward `r_t = clip(quality_t - env_penalty + noise, 0, 1)`
//! and the player's attributed salience follows the delta rule
//! `salience <- (1 - alpha) * salience + alpha * r_t`. Session intensity grows
//! with salience and the gap to the next session shrinks with it. A trace
//! ends when salience falls below the player's churn threshold, when the game
//! is completed, or when the next session would start past the horizon.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::calendar::{env_stamp, MINUTES_PER_DAY};
use super::{PlayerTrace, SessionRecord};
use crate::error::{Error, Result};
use crate::seed::mix_seed;

const SESSION_NOISE_SD: f64 = 0.3;
const GAP_NOISE_SD: f64 = 0.5;
const WORKING_HOURS_PENALTY: f64 = 0.5;

/// A game and its reward-generating capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSpec {
    pub game_id: String,
    pub base_quality: f64,
    /// Added to the quality once per elapsed session.
    pub quality_drift: f64,
    pub completion_sessions: Option<u32>,
    pub noise_sd: f64,
}

impl GameSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.base_quality) {
            return Err(Error::validation("base_quality", "must lie in [0, 1]"));
        }
        if !self.quality_drift.is_finite() {
            return Err(Error::validation("quality_drift", "must be finite"));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::validation("noise_sd", "must be >= 0"));
        }
        if self.completion_sessions == Some(0) {
            return Err(Error::validation("completion_sessions", "must be >= 1 when present"));
        }
        Ok(())
    }

    fn quality_at(&self, session_index: usize) -> f64 {
        (self.base_quality + self.quality_drift * session_index as f64).clamp(0.0, 1.0)
    }
}

/// Hidden per-player state driving the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPlayerState {
    pub salience: f64,
    pub learning_rate: f64,
    pub env_susceptibility: f64,
    pub churn_threshold: f64,
    pub rng_seed: u64,
}

impl LatentPlayerState {
    pub fn validate(&self) -> Result<()> {
        if !(self.salience.is_finite() && self.salience >= 0.0) {
            return Err(Error::validation("salience", "must be >= 0"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::validation("learning_rate", "must lie in (0, 1]"));
        }
        if !(self.env_susceptibility.is_finite() && self.env_susceptibility >= 0.0) {
            return Err(Error::validation("env_susceptibility", "must be >= 0"));
        }
        if !(self.churn_threshold.is_finite() && self.churn_threshold >= 0.0) {
            return Err(Error::validation("churn_threshold", "must be >= 0"));
        }
        Ok(())
    }
}

/// Salience after the session's update and the reward that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentStep {
    pub salience: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayerIdentity {
    pub user_id: String,
    pub region: String,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Multiplicative log-normal factor with unit mean.
fn lognormal_factor(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
    (sd * z - 0.5 * sd * sd).exp()
}

/// Simulates one player's sessions in one game.
///
/// The returned trace always contains at least one session; the first session
/// starts uniformly within the first day after `calendar_start`.
pub fn simulate_player(
    spec: &GameSpec,
    init: &LatentPlayerState,
    who: &PlayerIdentity,
    calendar_start: i64,
    horizon_days: u32,
) -> Result<PlayerTrace> {
    spec.validate()?;
    init.validate()?;
    if horizon_days == 0 {
        return Err(Error::validation("horizon", "must be >= 1 day"));
    }
    if calendar_start < 0 {
        return Err(Error::validation("calendar_start", "must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(init.rng_seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let horizon_end = calendar_start + i64::from(horizon_days) * MINUTES_PER_DAY;

    let mut salience = init.salience;
    let mut start = calendar_start + rng.random_range(0..MINUTES_PER_DAY);
    let mut prev_end: Option<f64> = None;
    let mut sessions = Vec::new();
    let mut latent = Vec::new();
    let mut completed = false;

    loop {
        let index = sessions.len();
        let env = env_stamp(start, &who.region);
        let penalty = if env.is_working_hours() {
            init.env_susceptibility * WORKING_HOURS_PENALTY
        } else {
            0.0
        };
        let noise = spec.noise_sd * unit.sample(&mut rng);
        let reward = (spec.quality_at(index) - penalty + noise).clamp(0.0, 1.0);

        let session_time =
            (10.0 + 110.0 * sigmoid(4.0 * (salience - 0.5))) * lognormal_factor(&mut rng, SESSION_NOISE_SD);
        let engaged_fraction = (0.55 + 0.4 * salience.min(1.0) + 0.05 * unit.sample(&mut rng)).clamp(0.05, 1.0);
        let play_time = session_time * engaged_fraction;
        let activity_rate = play_time * (0.3 + 0.7 * reward) + 1e-9;
        let activity_index = Poisson::new(activity_rate).expect("positive rate").sample(&mut rng) as u32;
        let variety = Poisson::new(1.0 + 10.0 * reward)
            .expect("positive rate")
            .sample(&mut rng) as u32;
        let activity_diversity = variety.min(activity_index);
        let delta_session = match prev_end {
            Some(end) => start as f64 - end,
            None => 0.0,
        };

        sessions.push(SessionRecord {
            user_id: who.user_id.clone(),
            game_id: spec.game_id.clone(),
            start_utc: start,
            session_time,
            play_time,
            delta_session,
            activity_index,
            activity_diversity,
            env,
        });

        salience = (1.0 - init.learning_rate) * salience + init.learning_rate * reward;
        latent.push(LatentStep { salience, reward });

        if let Some(done) = spec.completion_sessions {
            if sessions.len() >= done as usize {
                completed = true;
                break;
            }
        }
        if salience < init.churn_threshold {
            break;
        }

        let end = start as f64 + session_time;
        let gap = 30.0 * (3.0 * (1.0 - salience)).exp() * lognormal_factor(&mut rng, GAP_NOISE_SD);
        let next = (end + gap).ceil() as i64;
        let next = next.max(start + 1);
        if next >= horizon_end {
            break;
        }
        prev_end = Some(end);
        start = next;
    }

    let mut trace = PlayerTrace::new(&who.user_id, &spec.game_id, sessions, completed);
    trace.latent_trace = Some(latent);
    Ok(trace)
}

/// Describes a simulated population spread over several games.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub games: Vec<GameSpec>,
    pub players_per_game: usize,
    /// Epoch minutes of the observation window start.
    pub calendar_start: i64,
    pub horizon_days: u32,
    pub regions: Vec<String>,
    /// Players join uniformly over this fraction of the window.
    pub join_fraction: f64,
    pub initial_salience: (f64, f64),
    pub learning_rate: (f64, f64),
    pub env_susceptibility: (f64, f64),
    pub churn_threshold: (f64, f64),
    pub seed: u64,
}

impl PopulationSpec {
    /// End of the observation window in epoch minutes.
    pub fn observation_end(&self) -> i64 {
        self.calendar_start + i64::from(self.horizon_days) * MINUTES_PER_DAY
    }

    pub fn validate(&self) -> Result<()> {
        if self.games.is_empty() {
            return Err(Error::validation("games", "at least one game required"));
        }
        for g in &self.games {
            g.validate()?;
        }
        if self.regions.is_empty() {
            return Err(Error::validation("regions", "at least one region required"));
        }
        if self.horizon_days == 0 {
            return Err(Error::validation("horizon_days", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.join_fraction) {
            return Err(Error::validation("join_fraction", "must lie in [0, 1]"));
        }
        let ranges = [
            ("initial_salience", self.initial_salience),
            ("learning_rate", self.learning_rate),
            ("env_susceptibility", self.env_susceptibility),
            ("churn_threshold", self.churn_threshold),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::validation(name, "range must satisfy lo <= hi"));
            }
        }
        Ok(())
    }
}

/// Simulates every player of every game; output order is game-major and
/// independent of the worker count.
pub fn simulate_population(spec: &PopulationSpec) -> Result<Vec<PlayerTrace>> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spec.games.len())
        .flat_map(|g| (0..spec.players_per_game).map(move |p| (g, p)))
        .collect();
    jobs.par_iter()
        .map(|&(g, p)| {
            let game = &spec.games[g];
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, g as u64, p as u64));
            let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            };
            let init = LatentPlayerState {
                salience: draw(&mut rng, spec.initial_salience),
                learning_rate: draw(&mut rng, spec.learning_rate),
                env_susceptibility: draw(&mut rng, spec.env_susceptibility),
                churn_threshold: draw(&mut rng, spec.churn_threshold),
                rng_seed: rng.random(),
            };
            let max_join =
                ((f64::from(spec.horizon_days) * spec.join_fraction).floor() as u32).min(spec.horizon_days - 1);
            let join_day = if max_join > 0 {
                rng.random_range(0..=max_join)
            } else {
                0
            };
            let who = PlayerIdentity {
                user_id: format!("u{g:02}{p:05}"),
                region: spec.regions[rng.random_range(0..spec.regions.len())].clone(),
            };
            simulate_player(
                game,
                &init,
                &who,
                spec.calendar_start + i64::from(join_day) * MINUTES_PER_DAY,
                spec.horizon_days - join_day,
            )
        })
        .collect()
}
