//! Featurized dataset files: `manifest.json` plus `train.csv` / `test.csv`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetSplit, FeaturizedTrace, Preprocessor, BEHAVIOR_DIM};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub split_seed: u64,
    pub ratio: f64,
    pub preprocessor: Preprocessor,
    pub train_users: usize,
    pub test_users: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureRow {
    user_id: String,
    game_id: String,
    session_index: usize,
    session_time: f64,
    play_time: f64,
    delta_session: f64,
    activity_index: f64,
    activity_diversity: f64,
    hour_idx: usize,
    weekday_idx: usize,
    yearday_idx: usize,
    region_idx: usize,
    game_idx: usize,
    ch: f64,
    st: f64,
    ss: f64,
    ab: f64,
    ab_mask: u8,
}

fn write_split(path: &Path, traces: &[FeaturizedTrace]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for t in traces {
        for i in 0..t.len() {
            let b = t.behavior[i];
            let e = t.env[i];
            let y = t.targets[i];
            w.serialize(FeatureRow {
                user_id: t.user_id.clone(),
                game_id: t.game_id.clone(),
                session_index: i + 1,
                session_time: b[0],
                play_time: b[1],
                delta_session: b[2],
                activity_index: b[3],
                activity_diversity: b[4],
                hour_idx: e[0],
                weekday_idx: e[1],
                yearday_idx: e[2],
                region_idx: e[3],
                game_idx: t.game_idx,
                ch: y[0],
                st: y[1],
                ss: y[2],
                ab: y[3],
                ab_mask: u8::from(t.ab_mask[i]),
            })
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_split(path: &Path) -> Result<Vec<FeaturizedTrace>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out: Vec<FeaturizedTrace> = Vec::new();
    for row in reader.deserialize::<FeatureRow>() {
        let row = row.map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let starts_new = out
            .last()
            .is_none_or(|t| t.user_id != row.user_id || t.game_id != row.game_id);
        if starts_new {
            if row.session_index != 1 {
                return Err(Error::validation(
                    "session_index",
                    format!("user `{}` does not start at session 1", row.user_id),
                ));
            }
            out.push(FeaturizedTrace {
                user_id: row.user_id.clone(),
                game_id: row.game_id.clone(),
                game_idx: row.game_idx,
                behavior: Vec::new(),
                env: Vec::new(),
                targets: Vec::new(),
                ab_mask: Vec::new(),
            });
        }
        let t = out.last_mut().expect("pushed above");
        if row.session_index != t.len() + 1 {
            return Err(Error::validation(
                "session_index",
                format!("user `{}` has a gap at session {}", row.user_id, row.session_index),
            ));
        }
        let b: [f64; BEHAVIOR_DIM] = [
            row.session_time,
            row.play_time,
            row.delta_session,
            row.activity_index,
            row.activity_diversity,
        ];
        t.behavior.push(b);
        t.env
            .push([row.hour_idx, row.weekday_idx, row.yearday_idx, row.region_idx]);
        t.targets.push([row.ch, row.st, row.ss, row.ab]);
        t.ab_mask.push(row.ab_mask != 0);
    }
    Ok(out)
}

/// Writes `manifest.json`, `train.csv` and `test.csv` into `dir`.
pub fn write_dataset(dir: &Path, split: &DatasetSplit) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        split_seed: split.split_seed,
        ratio: split.ratio,
        preprocessor: split.preprocessor.clone(),
        train_users: split.train.len(),
        test_users: split.test.len(),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    write_split(&dir.join("train.csv"), &split.train)?;
    write_split(&dir.join("test.csv"), &split.test)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<DatasetSplit> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::validation(
            "version",
            format!("{}: unsupported manifest version {}", path.display(), manifest.version),
        ));
    }
    let train = read_split(&dir.join("train.csv"))?;
    let test = read_split(&dir.join("test.csv"))?;
    Ok(DatasetSplit {
        train,
        test,
        preprocessor: manifest.preprocessor,
        split_seed: manifest.split_seed,
        ratio: manifest.ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::split_dataset;
    use crate::telemetry::simulate_population;

    #[test]
    fn dataset_files_reload_identically() {
        let pop = crate::features::tests::small_population(10, 1);
        let traces = simulate_population(&pop).unwrap();
        let split = split_dataset(&traces, 0.8, 2, pop.observation_end() as f64).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &split).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, split);
    }
}
