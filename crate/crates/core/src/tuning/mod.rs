//! Hyperband search over architecture and optimizer knobs.

mod schedule;

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use schedule::{make_schedule, survivors, Bracket, BracketSchedule, Round};

use crate::error::{Error, Result};
use crate::features::FeaturizedTrace;
use crate::models::{
    multitask_loss, split_validation, train, EmbeddingDims, MelchiorConfig, MelchiorModel, MlpConfig, ModelKind,
    SequenceModel, TdMlp, TrainConfig, VocabSizes,
};
use crate::seed::mix_seed;

/// Share of the training users held out to score trials.
pub const VALIDATION_FRACTION: f64 = 0.2;

/// Equal weights used to rank trials.
pub const PROMOTION_WEIGHTS: [f64; 4] = [0.25; 4];

/// Inclusive ranges of every tuned knob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub hidden_width: (usize, usize),
    pub d_z: (usize, usize),
    pub layers: (usize, usize),
    /// Sampled log-uniformly.
    pub learning_rate: (f64, f64),
    pub embedding_dim: (usize, usize),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            hidden_width: (16, 128),
            d_z: (8, 64),
            layers: (1, 3),
            learning_rate: (1e-4, 1e-2),
            embedding_dim: (4, 32),
        }
    }
}

/// One point of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub hidden_width: usize,
    pub d_z: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub embedding_dim: usize,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("hidden_width", self.hidden_width),
            ("d_z", self.d_z),
            ("layers", self.layers),
            ("embedding_dim", self.embedding_dim),
        ] {
            if lo == 0 || lo > hi {
                return Err(Error::validation(name, "range must satisfy 1 <= lo <= hi"));
            }
        }
        let (lo, hi) = self.learning_rate;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::validation("learning_rate", "range must satisfy 0 < lo <= hi"));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> TrialConfig {
        let int = |rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)| rng.random_range(lo..=hi);
        let (lo, hi) = self.learning_rate;
        TrialConfig {
            hidden_width: int(rng, self.hidden_width),
            d_z: int(rng, self.d_z),
            layers: int(rng, self.layers),
            learning_rate: if hi > lo {
                rng.random_range(lo.ln()..=hi.ln()).exp()
            } else {
                lo
            },
            embedding_dim: int(rng, self.embedding_dim),
        }
    }
}

impl TrialConfig {
    pub fn embedding(&self) -> EmbeddingDims {
        let d = self.embedding_dim;
        EmbeddingDims {
            hour: d,
            weekday: d,
            yearday: d,
            region: d,
            game: d,
        }
    }

    pub fn mlp_config(&self, vocab: VocabSizes) -> MlpConfig {
        MlpConfig {
            embedding: self.embedding(),
            hidden_width: self.hidden_width,
            layers: self.layers,
            ..MlpConfig::new(vocab)
        }
    }

    pub fn melchior_config(&self, vocab: VocabSizes) -> MelchiorConfig {
        MelchiorConfig {
            embedding: self.embedding(),
            fusion_width: self.hidden_width,
            fusion_layers: self.layers,
            d_z: self.d_z,
            ..MelchiorConfig::new(vocab)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub bracket: usize,
    pub round: usize,
    /// Index of the configuration within its bracket.
    pub trial: usize,
    pub config: TrialConfig,
    pub epochs: usize,
    pub val_loss: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperbandOutcome {
    pub best: TrialResult,
    /// Every finished trial in bracket, round, trial order.
    pub trials: Vec<TrialResult>,
    /// Seeds of trials whose training diverged.
    pub diverged: Vec<u64>,
}

/// Result of a single trial evaluation; `None` marks divergence.
pub type TrialScore = Option<f64>;

/// Runs Hyperband with an arbitrary trial objective
/// `objective(config, epochs, trial_seed)`.
///
/// Configurations are sampled uniformly from `space`; after each round the
/// best `floor(n / eta)` (at least one) by score move on. Trials within a
/// round run concurrently, results are gathered in trial order.
pub fn hyperband_search<F>(
    space: &SearchSpace,
    schedule: &BracketSchedule,
    seed: u64,
    objective: F,
) -> Result<HyperbandOutcome>
where
    F: Fn(&TrialConfig, usize, u64) -> Result<TrialScore> + Sync,
{
    space.validate()?;
    let mut trials = Vec::new();
    let mut diverged = Vec::new();
    for bracket in &schedule.brackets {
        let s = bracket.s;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7475_6e65, s as u64));
        let configs: Vec<TrialConfig> = (0..bracket.rounds[0].n_configs)
            .map(|_| space.sample(&mut rng))
            .collect();
        let mut alive: Vec<usize> = (0..configs.len()).collect();
        for (round_idx, round) in bracket.rounds.iter().enumerate() {
            let scored: Vec<(usize, u64, TrialScore)> = alive
                .par_iter()
                .map(|&i| {
                    let trial_seed = mix_seed(seed, s as u64 + 1, i as u64);
                    objective(&configs[i], round.r_epochs, trial_seed).map(|score| (i, trial_seed, score))
                })
                .collect::<Result<_>>()?;
            let mut finished = Vec::new();
            for (i, trial_seed, score) in scored {
                match score.filter(|v| v.is_finite()) {
                    Some(val_loss) => {
                        trials.push(TrialResult {
                            bracket: s,
                            round: round_idx,
                            trial: i,
                            config: configs[i],
                            epochs: round.r_epochs,
                            val_loss,
                            seed: trial_seed,
                        });
                        finished.push((i, val_loss));
                    }
                    None => diverged.push(trial_seed),
                }
            }
            finished.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            finished.truncate(survivors(round.n_configs, schedule.eta));
            alive = finished.into_iter().map(|(i, _)| i).collect();
            alive.sort_unstable();
            if alive.is_empty() {
                break;
            }
        }
    }
    let best = trials
        .iter()
        .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
        .cloned()
        .ok_or_else(|| Error::AllTrialsDiverged {
            seeds: diverged.clone(),
        })?;
    Ok(HyperbandOutcome { best, trials, diverged })
}

/// Trains a fresh model of `kind` for one trial. Training early-stops on its
/// own loss; the score is the equally weighted validation loss.
pub fn run_trial(
    kind: ModelKind,
    vocab: VocabSizes,
    config: &TrialConfig,
    fit: &[FeaturizedTrace],
    validation: &[FeaturizedTrace],
    base: &TrainConfig,
    epochs: usize,
    seed: u64,
) -> Result<TrialScore> {
    fn go<M: SequenceModel>(
        mut model: M,
        fit: &[FeaturizedTrace],
        validation: &[FeaturizedTrace],
        cfg: &TrainConfig,
    ) -> Result<TrialScore> {
        match train(&mut model, fit, &[], cfg) {
            Ok(_) => {}
            Err(Error::NonFinite(_)) => return Ok(None),
            Err(e) => return Err(e),
        }
        match multitask_loss(&model, validation, PROMOTION_WEIGHTS) {
            Ok(l) => Ok(Some(l.total)),
            Err(Error::NonFinite(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
    let cfg = TrainConfig {
        epochs,
        learning_rate: config.learning_rate,
        seed,
        validation_fraction: 0.0,
        ..base.clone()
    };
    match kind {
        ModelKind::Mlp => go(TdMlp::new(config.mlp_config(vocab), seed)?, fit, validation, &cfg),
        ModelKind::Melchior => go(
            MelchiorModel::new(config.melchior_config(vocab), seed)?,
            fit,
            validation,
            &cfg,
        ),
        ModelKind::Enet => Err(Error::validation(
            "model",
            "the elastic net has no tunable architecture",
        )),
    }
}

/// Hyperband over neural models of `kind`, scoring trials on 20% of the
/// training users.
pub fn hyperband_run(
    kind: ModelKind,
    space: &SearchSpace,
    schedule: &BracketSchedule,
    train_split: &[FeaturizedTrace],
    vocab: VocabSizes,
    base: &TrainConfig,
    seed: u64,
) -> Result<HyperbandOutcome> {
    if kind == ModelKind::Enet {
        return Err(Error::validation(
            "model",
            "the elastic net has no tunable architecture",
        ));
    }
    let (fit, validation) = carve_validation(train_split, seed)?;
    hyperband_search(space, schedule, seed, |config, epochs, trial_seed| {
        run_trial(kind, vocab, config, &fit, &validation, base, epochs, trial_seed)
    })
}

/// By-user split of the training traces into (fit, validation).
pub fn carve_validation(
    train_split: &[FeaturizedTrace],
    seed: u64,
) -> Result<(Vec<FeaturizedTrace>, Vec<FeaturizedTrace>)> {
    let (fit, validation) = split_validation(train_split, VALIDATION_FRACTION, mix_seed(seed, 0x0076_616c, 0))?;
    if fit.is_empty() || validation.is_empty() {
        return Err(Error::validation(
            "train",
            format!(
                "{} users cannot be split {}% for validation",
                train_split.len(),
                VALIDATION_FRACTION * 100.0
            ),
        ));
    }
    Ok((fit, validation))
}

/// Writes `bracket,round,trial,config_json,epochs,val_loss`.
pub fn write_trial_log<W: Write>(trials: &[TrialResult], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bracket", "round", "trial", "config_json", "epochs", "val_loss"])?;
    for t in trials {
        let config = serde_json::to_string(&t.config).expect("plain struct serializes");
        w.write_record([
            t.bracket.to_string(),
            t.round.to_string(),
            t.trial.to_string(),
            config,
            t.epochs.to_string(),
            t.val_loss.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trial_log(path: &Path, trials: &[TrialResult]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trial_log(trials, file).map_err(|e| Error::csv(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::test_support::small_split;
    use std::collections::HashSet;
    use std::sync::Mutex;

    fn single_point() -> SearchSpace {
        SearchSpace {
            hidden_width: (8, 8),
            d_z: (4, 4),
            layers: (1, 1),
            learning_rate: (5e-3, 5e-3),
            embedding_dim: (4, 4),
        }
    }

    #[test]
    fn samples_stay_in_range() {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let c = space.sample(&mut rng);
            assert!((16..=128).contains(&c.hidden_width));
            assert!((8..=64).contains(&c.d_z));
            assert!((1..=3).contains(&c.layers));
            assert!((1e-4..=1e-2).contains(&c.learning_rate));
            assert!((4..=32).contains(&c.embedding_dim));
        }
        let mut bad = space;
        bad.layers = (3, 1);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn promotion_keeps_the_best_third() {
        let sched = make_schedule(9, 3).unwrap();
        let calls = Mutex::new(Vec::new());
        let out = hyperband_search(&SearchSpace::default(), &sched, 4, |c, epochs, _| {
            calls.lock().unwrap().push((c.hidden_width, epochs));
            Ok(Some(c.hidden_width as f64 / epochs as f64))
        })
        .unwrap();
        let top = &sched.brackets[0];
        for (r, round) in top.rounds.iter().enumerate() {
            let in_round: Vec<&TrialResult> = out
                .trials
                .iter()
                .filter(|t| t.bracket == top.s && t.round == r)
                .collect();
            assert_eq!(in_round.len(), round.n_configs);
            if r > 0 {
                let prev: Vec<&TrialResult> = out
                    .trials
                    .iter()
                    .filter(|t| t.bracket == top.s && t.round == r - 1)
                    .collect();
                let mut losses: Vec<f64> = prev.iter().map(|t| t.val_loss).collect();
                losses.sort_by(f64::total_cmp);
                let cut = losses[round.n_configs - 1];
                assert!(in_round
                    .iter()
                    .all(|t| prev.iter().any(|p| p.trial == t.trial && p.val_loss <= cut)));
            }
        }
        assert_eq!(calls.lock().unwrap().len(), out.trials.len());
    }

    #[test]
    fn planted_zero_loss_config_wins() {
        let sched = make_schedule(27, 3).unwrap();
        let out = hyperband_search(&SearchSpace::default(), &sched, 9, |c, _, _| {
            Ok(Some(if c.layers == 2 && c.hidden_width < 40 {
                0.0
            } else {
                1.0 + c.learning_rate
            }))
        })
        .unwrap();
        assert_eq!(out.best.val_loss, 0.0);
        assert_eq!(out.best.config.layers, 2);
    }

    #[test]
    fn all_diverged_reports_seeds() {
        let sched = make_schedule(3, 3).unwrap();
        let err = hyperband_search(&SearchSpace::default(), &sched, 2, |_, _, _| Ok(None)).unwrap_err();
        match err {
            Error::AllTrialsDiverged { seeds } => assert_eq!(seeds.len(), 3 + 2),
            other => panic!("unexpected {other}"),
        }
        let partly = hyperband_search(&SearchSpace::default(), &sched, 2, |c, _, _| {
            Ok((c.layers == 1).then_some(1.0).or(Some(f64::NAN)))
        })
        .unwrap();
        assert!(partly.trials.iter().all(|t| t.val_loss.is_finite()));
    }

    #[test]
    fn single_config_space_trains_at_full_budget() {
        let split = small_split(12, 3);
        let vocab = VocabSizes::from_vocabs(&split.preprocessor.vocabs);
        let sched = make_schedule(3, 3).unwrap();
        let base = TrainConfig {
            batch_size: 8,
            ..TrainConfig::default()
        };
        let out = hyperband_run(
            ModelKind::Melchior,
            &single_point(),
            &sched,
            &split.train,
            vocab,
            &base,
            5,
        )
        .unwrap();
        let point = single_point().sample(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out.best.config, point);
        assert!(out.trials.iter().all(|t| t.config == point));
        assert!(out.trials.iter().any(|t| t.epochs == 3));

        let again = hyperband_run(
            ModelKind::Melchior,
            &single_point(),
            &sched,
            &split.train,
            vocab,
            &base,
            5,
        )
        .unwrap();
        assert_eq!(again, out);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_trial_log(&out.trials, &mut a).unwrap();
        write_trial_log(&again.trials, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("bracket,round,trial,config_json,epochs,val_loss\n"));
        assert_eq!(text.lines().count(), out.trials.len() + 1);
        assert!(hyperband_run(ModelKind::Enet, &single_point(), &sched, &split.train, vocab, &base, 5).is_err());
    }

    #[test]
    fn validation_users_are_disjoint_and_a_fifth() {
        let split = small_split(20, 4);
        let (fit, val) = carve_validation(&split.train, 7).unwrap();
        let fit_users: HashSet<&str> = fit.iter().map(|t| t.user_id.as_str()).collect();
        assert!(val.iter().all(|t| !fit_users.contains(t.user_id.as_str())));
        assert_eq!(fit.len() + val.len(), split.train.len());
        let expect = split.train.len() - (0.8 * split.train.len() as f64).round() as usize;
        assert_eq!(val.len(), expect);
        assert!(carve_validation(&split.train[..1], 7).is_err());
    }
}
