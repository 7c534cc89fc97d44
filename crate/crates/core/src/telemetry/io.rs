use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::calendar::env_stamp;
use super::simulate::LatentStep;
use super::{validate_session, PlayerTrace, SessionRecord};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct TelemetryRow {
    user_id: String,
    game_id: String,
    start_utc: i64,
    session_time: f64,
    play_time: f64,
    delta_session: f64,
    activity_index: u32,
    activity_diversity: u32,
    region: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct LatentRow {
    user_id: String,
    session_index: usize,
    salience: f64,
    reward: f64,
}

/// Writes traces in the telemetry CSV schema, one row per session.
pub fn write_telemetry_csv<W: Write>(traces: &[PlayerTrace], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in traces.iter().flat_map(|t| &t.sessions) {
        w.serialize(TelemetryRow {
            user_id: s.user_id.clone(),
            game_id: s.game_id.clone(),
            start_utc: s.start_utc,
            session_time: s.session_time,
            play_time: s.play_time,
            delta_session: s.delta_session,
            activity_index: s.activity_index,
            activity_diversity: s.activity_diversity,
            region: s.env.region.clone(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the latent sidecar (`user_id,session_index,salience,reward`) for
/// traces that carry a latent trace. Session indices start at 1.
pub fn write_latent_csv<W: Write>(traces: &[PlayerTrace], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in traces {
        for (i, step) in t.latent_trace.iter().flatten().enumerate() {
            w.serialize(LatentRow {
                user_id: t.user_id.clone(),
                session_index: i + 1,
                salience: step.salience,
                reward: step.reward,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a telemetry CSV file. See [`read_traces`].
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Vec<PlayerTrace>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_traces(file, path)
}

/// Parses telemetry rows, groups them by (user_id, game_id) in order of first
/// appearance, and recomputes `delta_session` from timestamps.
///
/// Rows of one group must appear with strictly increasing `start_utc`.
/// `completed` is unknown from telemetry alone and is left false.
pub fn read_traces<R: Read>(input: R, path: &Path) -> Result<Vec<PlayerTrace>> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    const EXPECTED: [&str; 9] = [
        "user_id",
        "game_id",
        "start_utc",
        "session_time",
        "play_time",
        "delta_session",
        "activity_index",
        "activity_diversity",
        "region",
    ];
    if headers.iter().ne(EXPECTED) {
        return Err(Error::MalformedRow {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("expected header `{}`", EXPECTED.join(",")),
        });
    }

    let mut index: HashMap<(String, String), usize> = HashMap::new();
    let mut groups: Vec<Vec<SessionRecord>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                reason: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |reason: String| Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let row: TelemetryRow = record
            .deserialize(Some(&headers))
            .map_err(|e| malformed(e.to_string()))?;
        let session = SessionRecord {
            env: env_stamp(row.start_utc, &row.region),
            user_id: row.user_id,
            game_id: row.game_id,
            start_utc: row.start_utc,
            session_time: row.session_time,
            play_time: row.play_time,
            delta_session: row.delta_session,
            activity_index: row.activity_index,
            activity_diversity: row.activity_diversity,
        };
        validate_session(&session).map_err(|e| malformed(e.to_string()))?;

        let key = (session.user_id.clone(), session.game_id.clone());
        let slot = *index.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        let group = &mut groups[slot];
        session_delta(group, session)?;
    }

    Ok(groups
        .into_iter()
        .map(|sessions| {
            let (user, game) = (sessions[0].user_id.clone(), sessions[0].game_id.clone());
            PlayerTrace::new(user, game, sessions, false)
        })
        .collect())
}

fn session_delta(group: &mut Vec<SessionRecord>, mut session: SessionRecord) -> Result<()> {
    match group.last() {
        Some(prev) => {
            if session.start_utc <= prev.start_utc {
                return Err(Error::NonMonotone {
                    user_id: session.user_id,
                    game_id: session.game_id,
                });
            }
            session.delta_session = (session.start_utc as f64 - prev.end_utc()).max(0.0);
        }
        None => session.delta_session = 0.0,
    }
    group.push(session);
    Ok(())
}

/// Reads a latent sidecar into per-user step lists ordered by session index.
pub fn read_latent_csv(path: impl AsRef<Path>) -> Result<HashMap<String, Vec<LatentStep>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out: HashMap<String, Vec<(usize, LatentStep)>> = HashMap::new();
    for row in reader.deserialize::<LatentRow>() {
        let row = row.map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        out.entry(row.user_id).or_default().push((
            row.session_index,
            LatentStep {
                salience: row.salience,
                reward: row.reward,
            },
        ));
    }
    Ok(out
        .into_iter()
        .map(|(user, mut steps)| {
            steps.sort_by_key(|(i, _)| *i);
            (user, steps.into_iter().map(|(_, s)| s).collect())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "user_id,game_id,start_utc,session_time,play_time,delta_session,activity_index,activity_diversity,region\n";

    fn parse(body: &str) -> Result<Vec<PlayerTrace>> {
        read_traces(format!("{HEADER}{body}").as_bytes(), Path::new("mem.csv"))
    }

    #[test]
    fn gap_is_measured_end_to_start() {
        let traces = parse("u,g,0,30,20,0,5,2,eu\nu,g,100,30,20,999,5,2,eu\n").unwrap();
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].sessions[1].delta_session, 70.0);
        assert_eq!(traces[0].total_sessions, 2);
        assert_eq!(traces[0].total_play_time, 40.0);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn play_time_above_session_time_is_rejected() {
        let err = parse("u,g,0,30,31,0,5,2,eu\n").unwrap_err();
        match err {
            Error::MalformedRow { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse("u,g,0,30,20,0,5,2,eu\nu,g,abc,30,20,0,5,2,eu\n").unwrap_err();
        match err {
            Error::MalformedRow { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn out_of_order_rows_name_the_user() {
        let err = parse("alice,g,100,30,20,0,5,2,eu\nalice,g,50,30,20,0,5,2,eu\n").unwrap_err();
        assert!(err.to_string().contains("alice"));
    }

    #[test]
    fn wrong_header_is_rejected() {
        let err = read_traces("a,b\n1,2\n".as_bytes(), Path::new("x.csv")).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { line: 1, .. }));
    }

    #[test]
    fn groups_by_user_and_game() {
        let traces = parse("a,g1,0,10,5,0,1,1,eu\nb,g1,5,10,5,0,1,1,na\na,g1,50,10,5,0,1,1,eu\n").unwrap();
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[0].user_id, "a");
        assert_eq!(traces[0].len(), 2);
        assert_eq!(traces[1].sessions[0].env.region, "na");
    }
}
