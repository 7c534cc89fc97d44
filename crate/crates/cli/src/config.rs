use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use salience_lab::models::{EmbeddingDims, EnetConfig, MelchiorConfig, MlpConfig, ModelKind, TrainConfig, VocabSizes};
use salience_lab::seed::mix_seed;
use salience_lab::telemetry::{GameSpec, PopulationSpec, MINUTES_PER_DAY};
use salience_lab::tuning::{make_schedule, SearchSpace};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Configuration shipped with the binary.
pub const BUNDLED_CONFIG: &str = include_str!("../config/desk.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub simulate: SimulateSection,
    pub split: SplitSection,
    pub train: TrainSection,
    pub models: ModelsSection,
    pub tune: TuneSection,
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub games: Vec<GameSpec>,
    pub players_per_game: usize,
    pub calendar_start: i64,
    pub horizon_days: u32,
    pub regions: Vec<String>,
    pub join_fraction: f64,
    pub initial_salience: (f64, f64),
    pub learning_rate: (f64, f64),
    pub env_susceptibility: (f64, f64),
    pub churn_threshold: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub loss_weights: [f64; 4],
    pub validation_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsSection {
    pub enet: EnetConfig,
    pub mlp: MlpSection,
    pub melchior: MelchiorSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSection {
    pub embedding: EmbeddingDims,
    pub hidden_width: usize,
    pub layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelchiorSection {
    pub embedding: EmbeddingDims,
    pub behavior_width: usize,
    pub env_width: usize,
    pub object_width: usize,
    pub fusion_width: usize,
    pub fusion_layers: usize,
    pub d_z: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSection {
    pub model: ModelKind,
    pub max_epochs: usize,
    pub eta: usize,
    pub space: SearchSpace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub k_range: Vec<usize>,
    pub batch_size: usize,
    pub iterations: usize,
    pub silhouette_sample: usize,
    /// Session indices 1..=n compared between clusters in the report.
    pub profile_sessions: usize,
}

/// Stage identifiers mixed into the run seed.
#[derive(Debug, Clone, Copy)]
pub enum Stage {
    Simulate = 1,
    Split = 2,
    Train = 3,
    Tune = 4,
    Cluster = 5,
}

impl RunConfig {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_CONFIG).expect("bundled config is valid")
    }

    /// Reads `path` (or the bundled config), applies `--set` overrides, then
    /// validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let (text, origin) = match path {
            Some(p) => (
                std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
                p.display().to_string(),
            ),
            None => (BUNDLED_CONFIG.to_string(), "bundled config".to_string()),
        };
        let mut doc: Value = serde_json::from_str(&text).with_context(|| format!("parsing {origin}"))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let config: RunConfig = serde_json::from_value(doc).with_context(|| format!("config {origin}"))?;
        config.validate().with_context(|| format!("config {origin}"))?;
        Ok(config)
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        mix_seed(self.seed, stage as u64, 0)
    }

    pub fn population(&self) -> PopulationSpec {
        let s = &self.simulate;
        PopulationSpec {
            games: s.games.clone(),
            players_per_game: s.players_per_game,
            calendar_start: s.calendar_start,
            horizon_days: s.horizon_days,
            regions: s.regions.clone(),
            join_fraction: s.join_fraction,
            initial_salience: s.initial_salience,
            learning_rate: s.learning_rate,
            env_susceptibility: s.env_susceptibility,
            churn_threshold: s.churn_threshold,
            seed: self.stage_seed(Stage::Simulate),
        }
    }

    pub fn observation_end(&self) -> f64 {
        (self.simulate.calendar_start + i64::from(self.simulate.horizon_days) * MINUTES_PER_DAY) as f64
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            patience: t.patience,
            seed: self.stage_seed(Stage::Train),
            loss_weights: t.loss_weights,
            validation_fraction: t.validation_fraction,
        }
    }

    pub fn mlp_config(&self, vocab: VocabSizes) -> MlpConfig {
        let m = &self.models.mlp;
        MlpConfig {
            vocab,
            embedding: m.embedding,
            hidden_width: m.hidden_width,
            layers: m.layers,
        }
    }

    pub fn melchior_config(&self, vocab: VocabSizes) -> MelchiorConfig {
        let m = &self.models.melchior;
        MelchiorConfig {
            vocab,
            embedding: m.embedding,
            behavior_width: m.behavior_width,
            env_width: m.env_width,
            object_width: m.object_width,
            fusion_width: m.fusion_width,
            fusion_layers: m.fusion_layers,
            d_z: m.d_z,
        }
    }

    /// Checks every section before any stage runs.
    pub fn validate(&self) -> Result<()> {
        self.population().validate().context("simulate")?;
        if self.simulate.players_per_game == 0 {
            bail!("simulate.players_per_game: must be positive");
        }
        let mut ids: Vec<&str> = self.simulate.games.iter().map(|g| g.game_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            bail!("simulate.games: game_id values must be unique");
        }
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            bail!("split.ratio: must lie in (0, 1)");
        }
        self.train_config().validate().context("train")?;
        self.models.enet.validate().context("models.enet")?;
        let probe = VocabSizes {
            hour: 1,
            weekday: 1,
            yearday: 1,
            region: 1,
            game: 1,
        };
        self.mlp_config(probe).validate().context("models.mlp")?;
        self.melchior_config(probe).validate().context("models.melchior")?;
        if self.tune.model == ModelKind::Enet {
            bail!("tune.model: must be mlp or melchior");
        }
        make_schedule(self.tune.max_epochs, self.tune.eta).context("tune")?;
        self.tune.space.validate().context("tune.space")?;
        let a = &self.analysis;
        if a.k_range.is_empty() || a.k_range[0] == 0 || a.k_range.windows(2).any(|w| w[0] >= w[1]) {
            bail!("analysis.k_range: must be non-empty, ascending and start at 1 or more");
        }
        if a.batch_size == 0 || a.iterations == 0 || a.silhouette_sample == 0 || a.profile_sessions == 0 {
            bail!("analysis: batch_size, iterations, silhouette_sample and profile_sessions must be positive");
        }
        Ok(())
    }
}

/// Applies `path.to.key=value`. The value is parsed as JSON when possible and
/// taken as a string otherwise. Every path segment must already exist.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let Some((path, raw)) = assignment.split_once('=') else {
        bail!("--set {assignment}: expected KEY=VALUE");
    };
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for key in path.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(key),
            Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .with_context(|| format!("--set {path}: no such key `{key}`"))?;
    }
    *node = value;
    Ok(())
}
