use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    EnetConfig, MelchiorConfig, MelchiorModel, MlpConfig, ModelKind, Predictor, StepPrediction, TdEnet, TdMlp,
    VocabSizes,
};
use crate::error::{Error, Result};
use crate::features::FeaturizedTrace;
use crate::neural::checkpoint::{load_into, read_manifest, save};
use crate::neural::Tensor;

/// Any of the three trained estimators.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Enet(TdEnet),
    Mlp(TdMlp),
    Melchior(MelchiorModel),
}

#[derive(Serialize, Deserialize)]
struct EnetMeta {
    config: EnetConfig,
    vocab: VocabSizes,
    iterations: [usize; 4],
}

fn to_json<T: Serialize>(stem: &Path, v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::json(stem, e))
}

fn from_json<T: for<'de> Deserialize<'de>>(stem: &Path, v: serde_json::Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::json(stem, e))
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Enet(_) => ModelKind::Enet,
            TrainedModel::Mlp(_) => ModelKind::Mlp,
            TrainedModel::Melchior(_) => ModelKind::Melchior,
        }
    }

    /// Writes `<stem>.json` and `<stem>.bin`.
    pub fn save(&self, stem: &Path, seed: u64) -> Result<()> {
        let kind = self.kind().name();
        match self {
            TrainedModel::Enet(m) => {
                let meta = EnetMeta {
                    config: m.config,
                    vocab: m.vocab,
                    iterations: m.iterations,
                };
                save(stem, kind, seed, to_json(stem, &meta)?, m)
            }
            TrainedModel::Mlp(m) => save(stem, kind, seed, to_json(stem, &m.config)?, m),
            TrainedModel::Melchior(m) => save(stem, kind, seed, to_json(stem, &m.config)?, m),
        }
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let manifest = read_manifest(stem)?;
        let kind: ModelKind = manifest.kind.parse()?;
        Ok(match kind {
            ModelKind::Enet => {
                let meta: EnetMeta = from_json(stem, manifest.config)?;
                let mut m = TdEnet {
                    config: meta.config,
                    vocab: meta.vocab,
                    weights: Tensor::zeros(&[1, 1]),
                    intercepts: Tensor::zeros(&[4]),
                    iterations: meta.iterations,
                };
                m.weights = Tensor::zeros(&[4, m.width()]);
                load_into(stem, &mut m)?;
                TrainedModel::Enet(m)
            }
            ModelKind::Mlp => {
                let config: MlpConfig = from_json(stem, manifest.config)?;
                let mut m = TdMlp::new(config, 0)?;
                load_into(stem, &mut m)?;
                TrainedModel::Mlp(m)
            }
            ModelKind::Melchior => {
                let config: MelchiorConfig = from_json(stem, manifest.config)?;
                let mut m = MelchiorModel::new(config, 0)?;
                load_into(stem, &mut m)?;
                TrainedModel::Melchior(m)
            }
        })
    }
}

impl Predictor for TrainedModel {
    fn predict(&self, trace: &FeaturizedTrace) -> Result<Vec<StepPrediction>> {
        match self {
            TrainedModel::Enet(m) => m.predict(trace),
            TrainedModel::Mlp(m) => m.predict(trace),
            TrainedModel::Melchior(m) => m.predict(trace),
        }
    }
}
