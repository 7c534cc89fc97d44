use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::neural::{prefixed, Embedding, Parameters, Tensor};

/// Embedding widths for the categorical inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingDims {
    pub hour: usize,
    pub weekday: usize,
    pub yearday: usize,
    pub region: usize,
    pub game: usize,
}

impl Default for EmbeddingDims {
    fn default() -> Self {
        EmbeddingDims {
            hour: 8,
            weekday: 8,
            yearday: 16,
            region: 8,
            game: 8,
        }
    }
}

impl EmbeddingDims {
    pub fn env_width(&self) -> usize {
        self.hour + self.weekday + self.yearday + self.region
    }
}

/// Vocabulary sizes (including the out-of-vocabulary row).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub hour: usize,
    pub weekday: usize,
    pub yearday: usize,
    pub region: usize,
    pub game: usize,
}

impl VocabSizes {
    pub fn from_vocabs(v: &crate::features::Vocabularies) -> Self {
        VocabSizes {
            hour: v.hour.len(),
            weekday: v.weekday.len(),
            yearday: v.yearday.len(),
            region: v.region.len(),
            game: v.game.len(),
        }
    }
}

/// Embedding tables for the environment (hour, weekday, yearday, region) and
/// the game context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEmbeddings {
    pub hour: Embedding,
    pub weekday: Embedding,
    pub yearday: Embedding,
    pub region: Embedding,
    pub game: Embedding,
}

impl ContextEmbeddings {
    pub fn new<R: Rng>(sizes: VocabSizes, dims: EmbeddingDims, rng: &mut R) -> Self {
        ContextEmbeddings {
            hour: Embedding::new(sizes.hour, dims.hour, rng),
            weekday: Embedding::new(sizes.weekday, dims.weekday, rng),
            yearday: Embedding::new(sizes.yearday, dims.yearday, rng),
            region: Embedding::new(sizes.region, dims.region, rng),
            game: Embedding::new(sizes.game, dims.game, rng),
        }
    }

    fn env_tables(&self) -> [&Embedding; 4] {
        [&self.hour, &self.weekday, &self.yearday, &self.region]
    }

    pub fn env_width(&self) -> usize {
        self.env_tables().iter().map(|e| e.dim()).sum()
    }

    /// Concatenated environment embedding for one step.
    pub fn env_vector(&self, env: [usize; 4]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.env_width());
        for (table, idx) in self.env_tables().iter().zip(env) {
            out.extend_from_slice(table.lookup(idx)?);
        }
        Ok(out)
    }

    /// Scatters the gradient of a concatenated environment vector.
    pub fn env_backward(&self, env: [usize; 4], d: &[f64], grad: &mut ContextEmbeddings) {
        let mut offset = 0;
        let grads = [&mut grad.hour, &mut grad.weekday, &mut grad.yearday, &mut grad.region];
        for ((table, g), idx) in self.env_tables().iter().zip(grads).zip(env) {
            let w = table.dim();
            table.backward(idx, &d[offset..offset + w], g);
            offset += w;
        }
    }
}

impl Parameters for ContextEmbeddings {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = prefixed("hour", self.hour.named_params());
        out.extend(prefixed("weekday", self.weekday.named_params()));
        out.extend(prefixed("yearday", self.yearday.named_params()));
        out.extend(prefixed("region", self.region.named_params()));
        out.extend(prefixed("game", self.game.named_params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.hour.params_mut();
        out.extend(self.weekday.params_mut());
        out.extend(self.yearday.params_mut());
        out.extend(self.region.params_mut());
        out.extend(self.game.params_mut());
        out
    }
}
