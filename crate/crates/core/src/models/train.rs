use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Predictor, SequenceModel, StepPrediction};
use crate::error::{Error, Result};
use crate::features::{assign_users, FeaturizedTrace};
use crate::neural::loss::{bce, bce_grad, smape, smape_grad};
use crate::neural::{clip_global_norm, AdamState, GRAD_CLIP_NORM};
use crate::seed::mix_seed;

/// Traces per gradient work unit. Fixed so that the floating-point
/// reduction order does not depend on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Weights of the (ch, st, ss, ab) losses.
    pub loss_weights: [f64; 4],
    /// Share of training users held out for early stopping.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 32,
            learning_rate: 3e-3,
            patience: 6,
            seed: 0,
            loss_weights: [0.25; 4],
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate", "must be positive and finite"));
        }
        if self.patience == 0 {
            return Err(Error::validation("patience", "must be positive"));
        }
        if self.loss_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::validation("loss_weights", "must be non-negative"));
        }
        if (self.loss_weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::validation("loss_weights", "must sum to 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::validation("validation_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-target mean losses and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub per_target: [f64; 4],
    pub total: f64,
}

fn target_counts(traces: &[FeaturizedTrace]) -> [usize; 4] {
    let mut counts = [0; 4];
    for tr in traces {
        for t in 0..tr.len() {
            for (k, c) in counts.iter_mut().enumerate() {
                if tr.target_valid(t, k) {
                    *c += 1;
                }
            }
        }
    }
    counts
}

#[inline]
fn element_loss(k: usize, p: f64, t: f64) -> f64 {
    if k == 0 {
        bce(p, t)
    } else {
        smape(p, t)
    }
}

#[inline]
fn element_grad(k: usize, p: f64, t: f64) -> f64 {
    if k == 0 {
        bce_grad(p, t)
    } else {
        smape_grad(p, t)
    }
}

fn sum_losses(trace: &FeaturizedTrace, preds: &[StepPrediction]) -> [f64; 4] {
    let mut sums = [0.0; 4];
    for (t, p) in preds.iter().enumerate() {
        for (k, s) in sums.iter_mut().enumerate() {
            if trace.target_valid(t, k) {
                *s += element_loss(k, p[k], trace.targets[t][k]);
            }
        }
    }
    sums
}

fn breakdown(sums: [f64; 4], counts: [usize; 4], weights: [f64; 4]) -> Result<LossBreakdown> {
    let per_target: [f64; 4] = std::array::from_fn(|k| if counts[k] > 0 { sums[k] / counts[k] as f64 } else { 0.0 });
    let total = (0..4).map(|k| weights[k] * per_target[k]).sum::<f64>();
    if !total.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    Ok(LossBreakdown { per_target, total })
}

/// Weighted multitask loss of `model` over `traces`.
pub fn multitask_loss<P: Predictor + ?Sized>(
    model: &P,
    traces: &[FeaturizedTrace],
    weights: [f64; 4],
) -> Result<LossBreakdown> {
    if traces.is_empty() {
        return Err(Error::Empty("no traces to score".into()));
    }
    let partial: Vec<[f64; 4]> = traces
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut sums = [0.0; 4];
            for tr in chunk {
                let s = sum_losses(tr, &model.predict(tr)?);
                (0..4).for_each(|k| sums[k] += s[k]);
            }
            Ok(sums)
        })
        .collect::<Result<_>>()?;
    let mut sums = [0.0; 4];
    for s in partial {
        (0..4).for_each(|k| sums[k] += s[k]);
    }
    breakdown(sums, target_counts(traces), weights)
}

/// Gradient of the weighted multitask loss over `traces`, with the loss.
pub fn batch_gradient<M: SequenceModel>(
    model: &M,
    traces: &[FeaturizedTrace],
    weights: [f64; 4],
) -> Result<(M, LossBreakdown)> {
    let counts = target_counts(traces);
    let scale: [f64; 4] = std::array::from_fn(|k| {
        if counts[k] > 0 {
            weights[k] / counts[k] as f64
        } else {
            0.0
        }
    });
    let partial: Vec<(M, [f64; 4])> = traces
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grad = model.zeros_like();
            let mut sums = [0.0; 4];
            for tr in chunk {
                let (preds, cache) = model.forward_trace(tr)?;
                let s = sum_losses(tr, &preds);
                (0..4).for_each(|k| sums[k] += s[k]);
                let d_out: Vec<StepPrediction> = preds
                    .iter()
                    .enumerate()
                    .map(|(t, p)| {
                        std::array::from_fn(|k| {
                            if scale[k] != 0.0 && tr.target_valid(t, k) {
                                scale[k] * element_grad(k, p[k], tr.targets[t][k])
                            } else {
                                0.0
                            }
                        })
                    })
                    .collect();
                model.backward_trace(tr, &cache, &d_out, &mut grad);
            }
            Ok((grad, sums))
        })
        .collect::<Result<_>>()?;

    let mut grad = model.zeros_like();
    let mut sums = [0.0; 4];
    for (g, s) in &partial {
        grad.accumulate(g);
        (0..4).for_each(|k| sums[k] += s[k]);
    }
    Ok((grad, breakdown(sums, counts, weights)?))
}

/// Splits traces by user into (fit, validation) sides.
pub fn split_validation(
    traces: &[FeaturizedTrace],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<FeaturizedTrace>, Vec<FeaturizedTrace>)> {
    if fraction == 0.0 {
        return Ok((traces.to_vec(), Vec::new()));
    }
    let fit_users = assign_users(traces.iter().map(|t| t.user_id.as_str()), 1.0 - fraction, seed)?;
    Ok(traces.iter().cloned().partition(|t| fit_users.contains(&t.user_id)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Mini-batch Adam training with gradient clipping and early stopping on
/// `validation` (or on the training loss when `validation` is empty). The
/// model ends holding the best parameters seen.
pub fn train<M: SequenceModel>(
    model: &mut M,
    fit: &[FeaturizedTrace],
    validation: &[FeaturizedTrace],
    config: &TrainConfig,
) -> Result<TrainingHistory> {
    config.validate()?;
    if fit.is_empty() {
        return Err(Error::Empty("no training traces".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x7261_696e, 0));
    let mut adam = AdamState::new(model, config.learning_rate);
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut best = model.clone();
    let mut history = TrainingHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
    };
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<FeaturizedTrace> = idx.iter().map(|&i| fit[i].clone()).collect();
            let (mut grad, loss) = batch_gradient(model, &batch, config.loss_weights)?;
            clip_global_norm(&mut grad, GRAD_CLIP_NORM);
            adam.update(model, &grad)?;
            loss_sum += loss.total;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let val_loss = if validation.is_empty() {
            multitask_loss(model, fit, config.loss_weights)?.total
        } else {
            multitask_loss(model, validation, config.loss_weights)?.total
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best.clone_from(model);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    *model = best;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::test_support::small_split;
    use crate::models::{MelchiorConfig, MelchiorModel, MlpConfig, TdMlp, VocabSizes};

    fn melchior_for(split: &crate::features::DatasetSplit, seed: u64) -> MelchiorModel {
        let mut c = MelchiorConfig::new(VocabSizes::from_vocabs(&split.preprocessor.vocabs));
        c.fusion_width = 32;
        c.d_z = 16;
        MelchiorModel::new(c, seed).unwrap()
    }

    #[test]
    fn config_validation_names_fields() {
        let mut c = TrainConfig::default();
        c.loss_weights = [0.5, 0.5, 0.5, 0.0];
        assert!(matches!(c.validate(), Err(Error::Validation { field, .. }) if field == "loss_weights"));
        let c = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Validation { field, .. }) if field == "batch_size"));
    }

    #[test]
    fn churn_only_weights_leave_other_heads_untouched() {
        let split = small_split(10, 4);
        let model = melchior_for(&split, 1);
        let (grad, _) = batch_gradient(&model, &split.train[..6], [1.0, 0.0, 0.0, 0.0]).unwrap();
        for k in 1..4 {
            assert!(grad.heads[k].weight.data().iter().all(|&g| g == 0.0));
            assert!(grad.heads[k].bias.data().iter().all(|&g| g == 0.0));
        }
        assert!(grad.heads[0].weight.data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn gradient_does_not_depend_on_thread_count() {
        let split = small_split(10, 4);
        let model = melchior_for(&split, 2);
        let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        let a = pool(1).install(|| batch_gradient(&model, &split.train, [0.25; 4]).unwrap());
        let b = pool(4).install(|| batch_gradient(&model, &split.train, [0.25; 4]).unwrap());
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn same_seed_gives_identical_history() {
        let split = small_split(10, 6);
        let (fit, val) = split_validation(&split.train, 0.2, 1).unwrap();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = TdMlp::new(MlpConfig::new(VocabSizes::from_vocabs(&split.preprocessor.vocabs)), 3).unwrap();
            let h = train(&mut m, &fit, &val, &config).unwrap();
            (m, h)
        };
        let (a, b) = (run(), run());
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn validation_users_are_disjoint_from_fit_users() {
        let split = small_split(15, 2);
        let (fit, val) = split_validation(&split.train, 0.2, 9).unwrap();
        assert!(!val.is_empty());
        assert_eq!(fit.len() + val.len(), split.train.len());
        assert!(val.iter().all(|v| fit.iter().all(|f| f.user_id != v.user_id)));
    }

    #[test]
    fn keeps_best_validation_parameters() {
        let split = small_split(10, 8);
        let (fit, val) = split_validation(&split.train, 0.3, 2).unwrap();
        let mut model = melchior_for(&split, 5);
        let config = TrainConfig {
            epochs: 6,
            batch_size: 4,
            learning_rate: 0.02,
            patience: 2,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &fit, &val, &config).unwrap();
        let best = history.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(best, history.best_val_loss);
        let now = multitask_loss(&model, &val, config.loss_weights).unwrap().total;
        assert!((now - best).abs() < 1e-12);
    }

    #[test]
    fn overfits_a_batch_of_eight_users() {
        // BCE has an ln 2 floor on soft 0.5 labels and the terminal st/ss
        // targets are exactly 0, so the batch uses hard-labelled, long traces.
        let split = small_split(60, 12);
        let mut batch: Vec<FeaturizedTrace> = split
            .train
            .iter()
            .filter(|t| t.len() >= 25 && t.targets.iter().all(|y| y[0] != 0.5))
            .cloned()
            .collect();
        batch.truncate(8);
        assert_eq!(batch.len(), 8);
        let vocab = VocabSizes::from_vocabs(&split.preprocessor.vocabs);
        let mut model = MelchiorModel::new(MelchiorConfig::new(vocab), 0).unwrap();
        let config = TrainConfig {
            epochs: 500,
            batch_size: 8,
            learning_rate: 0.01,
            patience: 500,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &batch, &[], &config).unwrap();
        assert!(history.best_val_loss < 0.05, "{}", history.best_val_loss);
    }
}
