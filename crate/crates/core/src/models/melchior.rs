use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::context::{ContextEmbeddings, EmbeddingDims, VocabSizes};
use super::{SequenceModel, StepPrediction};
use crate::error::{Error, Result};
use crate::features::{FeaturizedTrace, BEHAVIOR_DIM};
use crate::neural::{prefixed, Activation, Dense, GruCell, GruStep, Parameters, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelchiorConfig {
    pub vocab: VocabSizes,
    pub embedding: EmbeddingDims,
    pub behavior_width: usize,
    pub env_width: usize,
    pub object_width: usize,
    pub fusion_width: usize,
    pub fusion_layers: usize,
    /// Width of the recurrent salience state.
    pub d_z: usize,
}

impl MelchiorConfig {
    pub fn new(vocab: VocabSizes) -> Self {
        MelchiorConfig {
            vocab,
            embedding: EmbeddingDims::default(),
            behavior_width: 32,
            env_width: 32,
            object_width: 8,
            fusion_width: 64,
            fusion_layers: 1,
            d_z: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("behavior_width", self.behavior_width),
            ("env_width", self.env_width),
            ("object_width", self.object_width),
            ("fusion_width", self.fusion_width),
            ("fusion_layers", self.fusion_layers),
            ("d_z", self.d_z),
        ];
        for (field, w) in widths {
            if w == 0 {
                return Err(Error::validation(field, "must be positive"));
            }
        }
        Ok(())
    }
}

/// Recurrent multitask model: behaviour, environment and game branches are
/// fused per step and fed to a GRU whose state is the salience embedding;
/// four heads read that state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelchiorModel {
    pub config: MelchiorConfig,
    pub embeddings: ContextEmbeddings,
    pub behavior: Dense,
    pub env: Dense,
    pub object: Dense,
    pub fusion: Vec<Dense>,
    pub salience: GruCell,
    /// ch (sigmoid), st, ss, ab (softplus).
    pub heads: Vec<Dense>,
}

/// Predictions and salience states for one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct MelchiorOutput {
    pub outputs: Vec<StepPrediction>,
    pub salience: Vec<Vec<f64>>,
}

/// Intermediate activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct MelchiorCache {
    env_in: Vec<Vec<f64>>,
    behavior_h: Vec<Vec<f64>>,
    env_h: Vec<Vec<f64>>,
    object_in: Vec<f64>,
    object_h: Vec<f64>,
    /// Per step: fusion input followed by each fusion layer's output.
    fusion_acts: Vec<Vec<Vec<f64>>>,
    steps: Vec<GruStep>,
}

const HEAD_ACTIVATIONS: [Activation; 4] = [
    Activation::Sigmoid,
    Activation::Softplus,
    Activation::Softplus,
    Activation::Softplus,
];

impl MelchiorModel {
    pub fn new(config: MelchiorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let embeddings = ContextEmbeddings::new(c.vocab, c.embedding, &mut rng);
        let behavior = Dense::new(BEHAVIOR_DIM, c.behavior_width, Activation::Tanh, &mut rng);
        let env = Dense::new(c.embedding.env_width(), c.env_width, Activation::Tanh, &mut rng);
        let object = Dense::new(c.embedding.game, c.object_width, Activation::Tanh, &mut rng);
        let mut fusion = Vec::with_capacity(c.fusion_layers);
        let mut width = c.behavior_width + c.env_width + c.object_width;
        for _ in 0..c.fusion_layers {
            fusion.push(Dense::new(width, c.fusion_width, Activation::Tanh, &mut rng));
            width = c.fusion_width;
        }
        let salience = GruCell::new(width, c.d_z, &mut rng);
        let heads = HEAD_ACTIVATIONS
            .iter()
            .map(|&a| Dense::new(c.d_z, 1, a, &mut rng))
            .collect();
        Ok(MelchiorModel {
            config,
            embeddings,
            behavior,
            env,
            object,
            fusion,
            salience,
            heads,
        })
    }

    pub fn d_z(&self) -> usize {
        self.config.d_z
    }

    /// Forward pass returning the four output series and the salience series.
    pub fn forward(&self, trace: &FeaturizedTrace) -> Result<MelchiorOutput> {
        let (outputs, cache) = self.forward_trace(trace)?;
        Ok(MelchiorOutput {
            outputs,
            salience: cache.steps.into_iter().map(|s| s.h).collect(),
        })
    }

    /// Forward pass over a batch of traces.
    pub fn forward_batch(&self, traces: &[FeaturizedTrace]) -> Result<Vec<MelchiorOutput>> {
        traces.iter().map(|t| self.forward(t)).collect()
    }
}

pub(super) fn check_lengths(trace: &FeaturizedTrace) -> Result<()> {
    if trace.env.len() != trace.len() || trace.targets.len() != trace.len() || trace.ab_mask.len() != trace.len() {
        return Err(Error::shape(
            &[trace.len()],
            &[trace.env.len(), trace.targets.len(), trace.ab_mask.len()],
            format!("sequence lengths for user {}", trace.user_id),
        ));
    }
    Ok(())
}

impl SequenceModel for MelchiorModel {
    type Cache = MelchiorCache;

    fn forward_trace(&self, trace: &FeaturizedTrace) -> Result<(Vec<StepPrediction>, MelchiorCache)> {
        check_lengths(trace)?;
        let n = trace.len();
        let object_in = self.embeddings.game.lookup(trace.game_idx)?.to_vec();
        let object_h = self.object.forward(&object_in)?;

        let mut cache = MelchiorCache {
            env_in: Vec::with_capacity(n),
            behavior_h: Vec::with_capacity(n),
            env_h: Vec::with_capacity(n),
            object_in,
            object_h,
            fusion_acts: Vec::with_capacity(n),
            steps: Vec::with_capacity(n),
        };
        let mut outputs = Vec::with_capacity(n);
        let mut h = vec![0.0; self.d_z()];
        for t in 0..n {
            let env_in = self.embeddings.env_vector(trace.env[t])?;
            let behavior_h = self.behavior.forward(&trace.behavior[t])?;
            let env_h = self.env.forward(&env_in)?;

            let mut x = Vec::with_capacity(behavior_h.len() + env_h.len() + cache.object_h.len());
            x.extend_from_slice(&behavior_h);
            x.extend_from_slice(&env_h);
            x.extend_from_slice(&cache.object_h);
            let mut acts = vec![x];
            for layer in &self.fusion {
                let y = layer.forward(acts.last().expect("fusion input"))?;
                acts.push(y);
            }

            let step = self.salience.step(acts.last().expect("fusion output"), &h);
            h.clone_from(&step.h);
            let mut y = [0.0; 4];
            for (k, head) in self.heads.iter().enumerate() {
                y[k] = head.forward(&step.h)?[0];
            }
            outputs.push(y);

            cache.env_in.push(env_in);
            cache.behavior_h.push(behavior_h);
            cache.env_h.push(env_h);
            cache.fusion_acts.push(acts);
            cache.steps.push(step);
        }
        Ok((outputs, cache))
    }

    fn backward_trace(
        &self,
        trace: &FeaturizedTrace,
        cache: &MelchiorCache,
        d_out: &[StepPrediction],
        grad: &mut Self,
    ) {
        let n = trace.len();
        let d_z = self.d_z();
        let mut dhs = vec![vec![0.0; d_z]; n];
        for t in 0..n {
            let h = &cache.steps[t].h;
            for (k, head) in self.heads.iter().enumerate() {
                if d_out[t][k] == 0.0 {
                    continue;
                }
                let y = [head.forward(h).expect("head width")[0]];
                head.backward(h, &y, &[d_out[t][k]], &mut grad.heads[k], Some(&mut dhs[t]));
            }
        }

        let xs: Vec<Vec<f64>> = cache
            .fusion_acts
            .iter()
            .map(|a| a.last().expect("fusion output").clone())
            .collect();
        let dxs = self
            .salience
            .backward_sequence(&xs, &cache.steps, &dhs, &mut grad.salience);

        let bw = self.config.behavior_width;
        let ew = self.config.env_width;
        let mut d_object_h = vec![0.0; cache.object_h.len()];
        for t in 0..n {
            let acts = &cache.fusion_acts[t];
            let mut d = dxs[t].clone();
            for l in (0..self.fusion.len()).rev() {
                let mut dx = vec![0.0; acts[l].len()];
                self.fusion[l].backward(&acts[l], &acts[l + 1], &d, &mut grad.fusion[l], Some(&mut dx));
                d = dx;
            }
            self.behavior.backward(
                &trace.behavior[t],
                &cache.behavior_h[t],
                &d[..bw],
                &mut grad.behavior,
                None,
            );
            let mut d_env_in = vec![0.0; cache.env_in[t].len()];
            self.env.backward(
                &cache.env_in[t],
                &cache.env_h[t],
                &d[bw..bw + ew],
                &mut grad.env,
                Some(&mut d_env_in),
            );
            self.embeddings
                .env_backward(trace.env[t], &d_env_in, &mut grad.embeddings);
            for (acc, v) in d_object_h.iter_mut().zip(&d[bw + ew..]) {
                *acc += v;
            }
        }
        let mut d_object_in = vec![0.0; cache.object_in.len()];
        self.object.backward(
            &cache.object_in,
            &cache.object_h,
            &d_object_h,
            &mut grad.object,
            Some(&mut d_object_in),
        );
        self.embeddings
            .game
            .backward(trace.game_idx, &d_object_in, &mut grad.embeddings.game);
    }
}

impl Parameters for MelchiorModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = prefixed("embeddings", self.embeddings.named_params());
        out.extend(prefixed("behavior", self.behavior.named_params()));
        out.extend(prefixed("env", self.env.named_params()));
        out.extend(prefixed("object", self.object.named_params()));
        out.extend(prefixed("fusion", self.fusion.named_params()));
        out.extend(prefixed("salience", self.salience.named_params()));
        out.extend(prefixed("heads", self.heads.named_params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.embeddings.params_mut();
        out.extend(self.behavior.params_mut());
        out.extend(self.env.params_mut());
        out.extend(self.object.params_mut());
        out.extend(self.fusion.params_mut());
        out.extend(self.salience.params_mut());
        out.extend(self.heads.params_mut());
        out
    }
}
