use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::context::{ContextEmbeddings, EmbeddingDims, VocabSizes};
use super::melchior::check_lengths;
use super::{SequenceModel, StepPrediction};
use crate::error::{Error, Result};
use crate::features::{FeaturizedTrace, BEHAVIOR_DIM};
use crate::neural::{prefixed, Activation, Dense, Parameters, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub vocab: VocabSizes,
    pub embedding: EmbeddingDims,
    pub hidden_width: usize,
    pub layers: usize,
}

impl MlpConfig {
    pub fn new(vocab: VocabSizes) -> Self {
        MlpConfig {
            vocab,
            embedding: EmbeddingDims::default(),
            hidden_width: 64,
            layers: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 {
            return Err(Error::validation("hidden_width", "must be positive"));
        }
        if self.layers == 0 {
            return Err(Error::validation("layers", "must be positive"));
        }
        Ok(())
    }
}

/// Per-session multilayer perceptron: each step's prediction depends only on
/// that step's behaviour, environment and game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdMlp {
    pub config: MlpConfig,
    pub embeddings: ContextEmbeddings,
    pub hidden: Vec<Dense>,
    pub heads: Vec<Dense>,
}

/// Per step: input vector followed by each hidden layer's output, plus the
/// head outputs.
#[derive(Debug, Clone)]
pub struct MlpCache {
    acts: Vec<Vec<Vec<f64>>>,
}

impl TdMlp {
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = ContextEmbeddings::new(config.vocab, config.embedding, &mut rng);
        let mut width = BEHAVIOR_DIM + config.embedding.env_width() + config.embedding.game;
        let mut hidden = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            hidden.push(Dense::new(width, config.hidden_width, Activation::Tanh, &mut rng));
            width = config.hidden_width;
        }
        let heads = [
            Activation::Sigmoid,
            Activation::Softplus,
            Activation::Softplus,
            Activation::Softplus,
        ]
        .iter()
        .map(|&a| Dense::new(width, 1, a, &mut rng))
        .collect();
        Ok(TdMlp {
            config,
            embeddings,
            hidden,
            heads,
        })
    }

    fn input(&self, trace: &FeaturizedTrace, t: usize) -> Result<Vec<f64>> {
        let mut x = trace.behavior[t].to_vec();
        x.extend(self.embeddings.env_vector(trace.env[t])?);
        x.extend_from_slice(self.embeddings.game.lookup(trace.game_idx)?);
        Ok(x)
    }
}

impl SequenceModel for TdMlp {
    type Cache = MlpCache;

    fn forward_trace(&self, trace: &FeaturizedTrace) -> Result<(Vec<StepPrediction>, MlpCache)> {
        check_lengths(trace)?;
        let mut outputs = Vec::with_capacity(trace.len());
        let mut cache = MlpCache {
            acts: Vec::with_capacity(trace.len()),
        };
        for t in 0..trace.len() {
            let mut acts = vec![self.input(trace, t)?];
            for layer in &self.hidden {
                let y = layer.forward(acts.last().expect("layer input"))?;
                acts.push(y);
            }
            let last = acts.last().expect("hidden output");
            let mut y = [0.0; 4];
            for (k, head) in self.heads.iter().enumerate() {
                y[k] = head.forward(last)?[0];
            }
            outputs.push(y);
            cache.acts.push(acts);
        }
        Ok((outputs, cache))
    }

    fn backward_trace(&self, trace: &FeaturizedTrace, cache: &MlpCache, d_out: &[StepPrediction], grad: &mut Self) {
        let env_width = self.embeddings.env_width();
        for t in 0..trace.len() {
            let acts = &cache.acts[t];
            let last = acts.last().expect("hidden output");
            let mut d = vec![0.0; last.len()];
            for (k, head) in self.heads.iter().enumerate() {
                if d_out[t][k] == 0.0 {
                    continue;
                }
                let y = [head.forward(last).expect("head width")[0]];
                head.backward(last, &y, &[d_out[t][k]], &mut grad.heads[k], Some(&mut d));
            }
            for l in (0..self.hidden.len()).rev() {
                let mut dx = vec![0.0; acts[l].len()];
                self.hidden[l].backward(&acts[l], &acts[l + 1], &d, &mut grad.hidden[l], Some(&mut dx));
                d = dx;
            }
            let env_end = BEHAVIOR_DIM + env_width;
            self.embeddings
                .env_backward(trace.env[t], &d[BEHAVIOR_DIM..env_end], &mut grad.embeddings);
            self.embeddings
                .game
                .backward(trace.game_idx, &d[env_end..], &mut grad.embeddings.game);
        }
    }
}

impl Parameters for TdMlp {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = prefixed("embeddings", self.embeddings.named_params());
        out.extend(prefixed("hidden", self.hidden.named_params()));
        out.extend(prefixed("heads", self.heads.named_params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.embeddings.params_mut();
        out.extend(self.hidden.params_mut());
        out.extend(self.heads.params_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{batch_gradient, Predictor};
    use crate::neural::grad_check;
    use rand::Rng;

    fn toy() -> TdMlp {
        let mut config = MlpConfig::new(VocabSizes {
            hour: 25,
            weekday: 8,
            yearday: 367,
            region: 3,
            game: 3,
        });
        config.embedding = EmbeddingDims {
            hour: 2,
            weekday: 2,
            yearday: 2,
            region: 2,
            game: 2,
        };
        config.hidden_width = 6;
        TdMlp::new(config, 3).unwrap()
    }

    fn trace(rng: &mut ChaCha8Rng, len: usize) -> FeaturizedTrace {
        FeaturizedTrace {
            user_id: "u".into(),
            game_id: "g".into(),
            game_idx: 1,
            behavior: (0..len)
                .map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
                .collect(),
            env: (0..len)
                .map(|_| {
                    [
                        rng.random_range(0..25),
                        rng.random_range(0..8),
                        rng.random_range(0..367),
                        2,
                    ]
                })
                .collect(),
            targets: (0..len)
                .map(|_| [1.0, rng.random_range(0.1..1.0), rng.random_range(0.1..1.0), 0.5])
                .collect(),
            ab_mask: vec![true; len],
        }
    }

    #[test]
    fn predictions_depend_only_on_the_current_step() {
        let model = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = trace(&mut rng, 6);
        let mut b = a.clone();
        // permute the other steps; step 2 keeps its own inputs
        b.behavior.reverse();
        b.env.reverse();
        b.behavior.swap(2, 3);
        b.env.swap(2, 3);
        let (pa, pb) = (model.predict(&a).unwrap(), model.predict(&b).unwrap());
        assert_eq!(a.env[2], b.env[2]);
        assert_ne!(a.env[0], b.env[0]);
        assert_eq!(pa[2], pb[2]);
        let single = FeaturizedTrace {
            behavior: vec![a.behavior[4]],
            env: vec![a.env[4]],
            targets: vec![a.targets[4]],
            ab_mask: vec![true],
            ..a.clone()
        };
        assert_eq!(model.predict(&single).unwrap()[0], pa[4]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = vec![trace(&mut rng, 3), trace(&mut rng, 4)];
        let w = [0.4, 0.3, 0.2, 0.1];
        let (grad, _) = batch_gradient(&model, &batch, w).unwrap();
        let check = grad_check(&model, &grad, |m| batch_gradient(m, &batch, w).unwrap().1.total, 1e-6);
        assert!(check.max_rel_error < 1e-4, "{check:?}");
    }
}
