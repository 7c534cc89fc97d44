//! Checkpoint format: a JSON manifest (`<stem>.json`) describing every tensor
//! and a sidecar (`<stem>.bin`) holding the tensors' little-endian `f64` data
//! back to back in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::Parameters;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in `f64` elements from the start of the sidecar.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub kind: String,
    pub seed: u64,
    /// Architecture description needed to rebuild the parameter container.
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    pub data_file: String,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

/// Writes `params` to `<stem>.json` and `<stem>.bin`.
pub fn save<P: Parameters>(stem: &Path, kind: &str, seed: u64, config: serde_json::Value, params: &P) -> Result<()> {
    let (json_path, bin_path) = paths(stem);
    let mut tensors = Vec::new();
    let mut bytes = Vec::new();
    let mut offset = 0;
    for (name, t) in params.named_params() {
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        kind: kind.to_string(),
        seed,
        config,
        tensors,
        data_file: bin_path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    if let Some(dir) = json_path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&json_path, e))?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;
    Ok(())
}

pub fn read_manifest(stem: &Path) -> Result<CheckpointManifest> {
    let (json_path, _) = paths(stem);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::json(&json_path, e))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version {}",
            json_path.display(),
            manifest.version
        )));
    }
    Ok(manifest)
}

/// Fills `params` (whose architecture must already match) from a checkpoint.
pub fn load_into<P: Parameters>(stem: &Path, params: &mut P) -> Result<CheckpointManifest> {
    let manifest = read_manifest(stem)?;
    let bin_path = stem.with_file_name(&manifest.data_file);
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!("{}: truncated data", bin_path.display())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let expected: Vec<(String, Vec<usize>)> = params
        .named_params()
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec()))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, checkpoint has {}",
            expected.len(),
            manifest.tensors.len()
        )));
    }
    for ((name, shape), entry) in expected.iter().zip(&manifest.tensors) {
        if name != &entry.name || shape != &entry.shape {
            return Err(Error::Checkpoint(format!(
                "tensor {name} {shape:?} does not match checkpoint entry {} {:?}",
                entry.name, entry.shape
            )));
        }
        let len: usize = shape.iter().product();
        if entry.offset + len > values.len() {
            return Err(Error::Checkpoint(format!("tensor {name} runs past the data file")));
        }
    }
    for (t, entry) in params.params_mut().into_iter().zip(&manifest.tensors) {
        let len = t.len();
        t.data_mut().copy_from_slice(&values[entry.offset..entry.offset + len]);
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, Dense, GruCell};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_and_load_restore_exact_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = vec![
            Dense::new(3, 4, Activation::Tanh, &mut rng),
            Dense::new(4, 1, Activation::Linear, &mut rng),
        ];
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        save(&stem, "toy", 8, serde_json::json!({"layers": 2}), &params).unwrap();
        let mut restored = params.zeros_like();
        let manifest = load_into(&stem, &mut restored).unwrap();
        assert_eq!(restored, params);
        assert_eq!(manifest.kind, "toy");
        assert_eq!(manifest.tensors[1].name, "0.bias");

        let bytes = std::fs::read(stem.with_extension("bin")).unwrap();
        assert_eq!(bytes.len(), params.num_params() * 8);
        assert_eq!(&bytes[..8], &params[0].weight.data()[0].to_le_bytes());
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cell = GruCell::new(2, 3, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("gru");
        save(&stem, "gru", 0, serde_json::Value::Null, &cell).unwrap();
        let mut other = GruCell::zeros(2, 4);
        assert!(load_into(&stem, &mut other).is_err());
    }
}
