//! Estimators of future interaction intensity and their shared training,
//! evaluation and embedding-extraction machinery.
//!
//! All three models predict the four per-session targets (ch, st, ss, ab):
//! [`TdEnet`] and [`TdMlp`] see one session at a time, while
//! [`MelchiorModel`] carries a recurrent salience state across the sequence.

mod context;
mod enet;
mod eval;
mod melchior;
mod mlp;
mod store;
mod train;

pub use context::{ContextEmbeddings, EmbeddingDims, VocabSizes};
pub use enet::{EnetConfig, TdEnet, ENET_FEATURE_GROUPS};
pub use eval::{evaluate, write_eval_csv, CellLoss, EvalReport};
pub use melchior::{MelchiorCache, MelchiorConfig, MelchiorModel, MelchiorOutput};
pub use mlp::{MlpConfig, TdMlp};
pub use store::TrainedModel;
pub use train::{
    batch_gradient, multitask_loss, split_validation, train, EpochRecord, LossBreakdown, TrainConfig, TrainingHistory,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeaturizedTrace;
use crate::neural::Parameters;

/// Per-step predictions in target order (ch, st, ss, ab).
pub type StepPrediction = [f64; 4];

/// Anything that maps a featurized trace to per-step predictions.
pub trait Predictor: Sync {
    fn predict(&self, trace: &FeaturizedTrace) -> Result<Vec<StepPrediction>>;
}

/// A differentiable model trained by backpropagation over whole traces.
pub trait SequenceModel: Parameters + Send + Sync {
    type Cache: Send;

    fn forward_trace(&self, trace: &FeaturizedTrace) -> Result<(Vec<StepPrediction>, Self::Cache)>;

    /// Accumulates parameter gradients into `grad` given the gradient of the
    /// loss with respect to every prediction.
    fn backward_trace(&self, trace: &FeaturizedTrace, cache: &Self::Cache, d_out: &[StepPrediction], grad: &mut Self);
}

impl<M: SequenceModel> Predictor for M {
    fn predict(&self, trace: &FeaturizedTrace) -> Result<Vec<StepPrediction>> {
        Ok(self.forward_trace(trace)?.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Enet,
    Mlp,
    Melchior,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Enet, ModelKind::Mlp, ModelKind::Melchior];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Enet => "enet",
            ModelKind::Mlp => "mlp",
            ModelKind::Melchior => "melchior",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "enet" => Ok(ModelKind::Enet),
            "mlp" => Ok(ModelKind::Mlp),
            "melchior" => Ok(ModelKind::Melchior),
            other => Err(Error::validation("model", format!("unknown model kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Salience-layer activations for one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEmbedding {
    pub user_id: String,
    pub game_id: String,
    pub game_idx: usize,
    /// One vector of width d_z per session.
    pub z: Vec<Vec<f64>>,
}

impl TraceEmbedding {
    /// The state after the last observed session.
    pub fn final_state(&self) -> &[f64] {
        self.z.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Runs a forward pass over every trace and keeps the salience states.
pub fn extract_embedding(model: &MelchiorModel, traces: &[FeaturizedTrace]) -> Result<Vec<TraceEmbedding>> {
    use rayon::prelude::*;
    traces
        .par_iter()
        .map(|t| {
            let out = model.forward(t)?;
            Ok(TraceEmbedding {
                user_id: t.user_id.clone(),
                game_id: t.game_id.clone(),
                game_idx: t.game_idx,
                z: out.salience,
            })
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod test_support {
    use crate::features::{split_dataset, tests::small_population, DatasetSplit};
    use crate::telemetry::simulate_population;

    pub fn small_split(players: usize, seed: u64) -> DatasetSplit {
        let spec = small_population(players, seed);
        let traces = simulate_population(&spec).unwrap();
        split_dataset(&traces, 0.8, seed, spec.observation_end() as f64).unwrap()
    }
}
