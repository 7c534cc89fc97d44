//! Player telemetry: session records, a salience-driven player simulator,
//! and CSV ingestion.

mod calendar;
mod io;
mod simulate;

pub use calendar::{civil_from_days, env_stamp, is_leap_year, EnvStamp, MINUTES_PER_DAY};
pub use io::{ingest_csv, read_latent_csv, read_traces, write_latent_csv, write_telemetry_csv};
pub use simulate::{
    simulate_player, simulate_population, GameSpec, LatentPlayerState, LatentStep, PlayerIdentity, PopulationSpec,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed play session (the five behavioural metrics plus context).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub user_id: String,
    pub game_id: String,
    /// Epoch minutes.
    pub start_utc: i64,
    pub session_time: f64,
    pub play_time: f64,
    /// Minutes from the end of the previous session to the start of this one.
    pub delta_session: f64,
    pub activity_index: u32,
    pub activity_diversity: u32,
    pub env: EnvStamp,
}

impl SessionRecord {
    pub fn end_utc(&self) -> f64 {
        self.start_utc as f64 + self.session_time
    }

    /// The five behavioural metrics in canonical order.
    pub fn behavior(&self) -> [f64; 5] {
        [
            self.session_time,
            self.play_time,
            self.delta_session,
            f64::from(self.activity_index),
            f64::from(self.activity_diversity),
        ]
    }
}

/// All sessions of one user in one game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerTrace {
    pub user_id: String,
    pub game_id: String,
    pub sessions: Vec<SessionRecord>,
    /// Pt: total played minutes.
    pub total_play_time: f64,
    /// Ps: total played sessions.
    pub total_sessions: usize,
    pub completed: bool,
    pub latent_trace: Option<Vec<LatentStep>>,
}

impl PlayerTrace {
    /// Builds a trace and fills the totals from `sessions`.
    pub fn new(
        user_id: impl Into<String>,
        game_id: impl Into<String>,
        sessions: Vec<SessionRecord>,
        completed: bool,
    ) -> Self {
        let total_play_time = sessions.iter().map(|s| s.play_time).sum();
        let total_sessions = sessions.len();
        PlayerTrace {
            user_id: user_id.into(),
            game_id: game_id.into(),
            sessions,
            total_play_time,
            total_sessions,
            completed,
            latent_trace: None,
        }
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    /// End of the last session in epoch minutes.
    pub fn last_activity(&self) -> Option<f64> {
        self.sessions.last().map(SessionRecord::end_utc)
    }

    /// Checks every trace and session invariant.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.sessions.iter().enumerate() {
            validate_session(s)?;
            if s.user_id != self.user_id || s.game_id != self.game_id {
                return Err(Error::validation(
                    "sessions",
                    format!("session {i} belongs to another user or game"),
                ));
            }
            if i == 0 && s.delta_session != 0.0 {
                return Err(Error::validation(
                    "delta_session",
                    "first session must have delta_session = 0",
                ));
            }
            if i > 0 && s.start_utc <= self.sessions[i - 1].start_utc {
                return Err(Error::NonMonotone {
                    user_id: self.user_id.clone(),
                    game_id: self.game_id.clone(),
                });
            }
        }
        if self.total_sessions != self.sessions.len() {
            return Err(Error::validation("total_sessions", "Ps must equal session count"));
        }
        let pt: f64 = self.sessions.iter().map(|s| s.play_time).sum();
        if pt != self.total_play_time {
            return Err(Error::validation("total_play_time", "Pt must equal summed play_time"));
        }
        if let Some(latent) = &self.latent_trace {
            if latent.len() != self.sessions.len() {
                return Err(Error::validation("latent_trace", "one entry per session required"));
            }
        }
        Ok(())
    }
}

pub(crate) fn validate_session(s: &SessionRecord) -> Result<()> {
    let nonneg = |field: &str, v: f64| {
        if v.is_finite() && v >= 0.0 {
            Ok(())
        } else {
            Err(Error::validation(field, format!("must be finite and >= 0, got {v}")))
        }
    };
    nonneg("session_time", s.session_time)?;
    nonneg("play_time", s.play_time)?;
    nonneg("delta_session", s.delta_session)?;
    if s.play_time > s.session_time {
        return Err(Error::validation("play_time", "play_time exceeds session_time"));
    }
    if s.activity_diversity > s.activity_index {
        return Err(Error::validation(
            "activity_diversity",
            "activity_diversity exceeds activity_index",
        ));
    }
    if s.start_utc < 0 {
        return Err(Error::validation("start_utc", "must be >= 0"));
    }
    Ok(())
}
