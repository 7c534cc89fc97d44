//! Target construction: survival time/sessions, absence, and churn labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::PlayerTrace;

/// Future-intensity targets attached to one session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetVector {
    /// Churn probability, one of 0.0, 0.5, 1.0.
    pub churn: f64,
    /// Remaining play minutes after this session.
    pub survival_time: f64,
    /// Remaining sessions after this session.
    pub survival_sessions: f64,
    /// Minutes from the end of this session to the start of the next.
    pub absence: f64,
    /// False at the final session, where absence is undefined.
    pub absence_mask: bool,
}

/// Linear-interpolation (type 7) quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Inactivity threshold `Q3 + 1.5 * IQR` over inter-session gaps.
pub fn inactivity_threshold(gaps: &[f64]) -> Result<f64> {
    if gaps.is_empty() {
        return Err(Error::Empty("inactivity threshold needs at least one gap".into()));
    }
    if let Some(bad) = gaps.iter().find(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gap {bad}")));
    }
    let mut sorted = gaps.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    Ok(q3 + 1.5 * (q3 - q1))
}

/// Churn encoding: 0 when the game was completed, 1 when inactive for at
/// least `threshold` minutes, 0.5 otherwise.
pub fn churn_probability(completed: bool, inactive_for: f64, threshold: f64) -> f64 {
    if completed {
        0.0
    } else if inactive_for >= threshold {
        1.0
    } else {
        0.5
    }
}

/// Per-session targets for one trace. `observation_end` is in epoch minutes.
pub fn compute_targets(trace: &PlayerTrace, threshold: f64, observation_end: f64) -> Vec<TargetVector> {
    let inactive_for = trace
        .last_activity()
        .map_or(0.0, |end| (observation_end - end).max(0.0));
    let churn = churn_probability(trace.completed, inactive_for, threshold);
    let n = trace.sessions.len();
    let mut played = 0.0;
    trace
        .sessions
        .iter()
        .enumerate()
        .map(|(i, s)| {
            played += s.play_time;
            let absence = trace.sessions.get(i + 1).map(|next| next.delta_session);
            TargetVector {
                churn,
                survival_time: trace.total_play_time - played,
                survival_sessions: (n - (i + 1)) as f64,
                absence: absence.unwrap_or(0.0),
                absence_mask: absence.is_some(),
            }
        })
        .collect()
}
