use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::context::VocabSizes;
use super::melchior::check_lengths;
use super::{Predictor, StepPrediction};
use crate::error::{Error, Result};
use crate::features::{FeaturizedTrace, BEHAVIOR_DIM};
use crate::neural::{sigmoid, softplus, Parameters, Tensor};

/// Column groups of the design matrix, in order.
pub const ENET_FEATURE_GROUPS: [&str; 6] = ["behavior", "hour", "weekday", "yearday", "region", "game"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnetConfig {
    /// Overall penalty strength.
    pub lambda: f64,
    /// Share of the penalty on the L1 term.
    pub l1_ratio: f64,
    pub max_iter: usize,
    /// Stop when no parameter moves by more than this.
    pub tol: f64,
}

impl Default for EnetConfig {
    fn default() -> Self {
        EnetConfig {
            lambda: 1.0,
            l1_ratio: 0.5,
            max_iter: 3000,
            tol: 1e-8,
        }
    }
}

impl EnetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::validation("lambda", "must be non-negative and finite"));
        }
        if !(0.0..=1.0).contains(&self.l1_ratio) {
            return Err(Error::validation("l1_ratio", "must lie in [0, 1]"));
        }
        if self.max_iter == 0 {
            return Err(Error::validation("max_iter", "must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::validation("tol", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Link {
    Identity,
    Logistic,
}

/// Sparse row: leading dense values plus indices of active unit columns.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Row {
    pub dense: Vec<f64>,
    pub active: Vec<usize>,
}

impl Row {
    #[inline]
    fn dot(&self, w: &[f64]) -> f64 {
        let mut s: f64 = self.dense.iter().zip(w).map(|(x, w)| x * w).sum();
        for &j in &self.active {
            s += w[j];
        }
        s
    }

    #[inline]
    fn axpy(&self, a: f64, out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(&self.dense) {
            *o += a * x;
        }
        for &j in &self.active {
            out[j] += a;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LinearFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
}

fn row_loss(link: Link, eta: f64, y: f64) -> f64 {
    match link {
        Link::Identity => 0.5 * (eta - y) * (eta - y),
        // -(y ln σ + (1-y) ln(1-σ)) written stably
        Link::Logistic => softplus(eta) - y * eta,
    }
}

fn row_residual(link: Link, eta: f64, y: f64) -> f64 {
    match link {
        Link::Identity => eta - y,
        Link::Logistic => sigmoid(eta) - y,
    }
}

struct Problem<'a> {
    rows: &'a [Row],
    y: &'a [f64],
    d: usize,
    link: Link,
    ridge: f64,
}

impl Problem<'_> {
    /// Smooth part (data term plus ridge) at (w, b).
    fn value(&self, w: &[f64], b: f64) -> f64 {
        let data: f64 = self
            .rows
            .iter()
            .zip(self.y)
            .map(|(r, &y)| row_loss(self.link, r.dot(w) + b, y))
            .sum();
        data + 0.5 * self.ridge * w.iter().map(|v| v * v).sum::<f64>()
    }

    fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, f64, f64) {
        let mut gw: Vec<f64> = w.iter().map(|v| self.ridge * v).collect();
        let mut gb = 0.0;
        let mut value = 0.5 * self.ridge * w.iter().map(|v| v * v).sum::<f64>();
        for (r, &y) in self.rows.iter().zip(self.y) {
            let eta = r.dot(w) + b;
            value += row_loss(self.link, eta, y);
            let e = row_residual(self.link, eta, y);
            r.axpy(e, &mut gw);
            gb += e;
        }
        (gw, gb, value)
    }

    /// Largest eigenvalue of [X 1]ᵀ[X 1] by power iteration.
    fn spectral_estimate(&self, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..=self.d).map(|_| rng.random_range(0.5..1.5)).collect();
        let mut estimate = 0.0;
        for _ in 0..60 {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let mut out = vec![0.0; self.d + 1];
            for r in self.rows {
                let s = r.dot(&v[..self.d]) + v[self.d];
                r.axpy(s, &mut out[..self.d]);
                out[self.d] += s;
            }
            estimate = out.iter().zip(&v).map(|(a, b)| a * b).sum();
            v = out;
        }
        estimate.max(1e-12)
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Minimizes `Σ loss(x_i·w + b, y_i) + λ(α‖w‖₁ + (1−α)/2 ‖w‖²)` by
/// accelerated proximal gradient with backtracking. The intercept is not
/// penalized.
pub(crate) fn fit_linear(
    rows: &[Row],
    y: &[f64],
    d: usize,
    link: Link,
    config: &EnetConfig,
    seed: u64,
) -> Result<LinearFit> {
    config.validate()?;
    if rows.is_empty() {
        return Err(Error::Empty("no rows to fit".into()));
    }
    let l1 = config.lambda * config.l1_ratio;
    let problem = Problem {
        rows,
        y,
        d,
        link,
        ridge: config.lambda * (1.0 - config.l1_ratio),
    };
    let curvature = match link {
        Link::Identity => 1.0,
        Link::Logistic => 0.25,
    };
    let mut lipschitz = curvature * problem.spectral_estimate(seed) + problem.ridge;

    let mut w = vec![0.0; d];
    let mut b = match link {
        Link::Identity => y.iter().sum::<f64>() / y.len() as f64,
        Link::Logistic => 0.0,
    };
    let (mut yw, mut yb) = (w.clone(), b);
    let mut momentum: f64 = 1.0;
    let mut prev_objective = f64::INFINITY;
    let penalty = |w: &[f64]| l1 * w.iter().map(|v| v.abs()).sum::<f64>();

    for iteration in 1..=config.max_iter {
        let (gw, gb, fy) = problem.gradient(&yw, yb);
        if !fy.is_finite() {
            return Err(Error::NonFinite("elastic-net loss".into()));
        }
        // backtracking on the quadratic upper bound
        let (nw, nb, fnew) = loop {
            let step = 1.0 / lipschitz;
            let nw: Vec<f64> = yw
                .iter()
                .zip(&gw)
                .map(|(v, g)| soft_threshold(v - step * g, step * l1))
                .collect();
            let nb = yb - step * gb;
            let fnew = problem.value(&nw, nb);
            let mut lin = gb * (nb - yb);
            let mut sq = (nb - yb) * (nb - yb);
            for j in 0..d {
                let delta = nw[j] - yw[j];
                lin += gw[j] * delta;
                sq += delta * delta;
            }
            if fnew.is_finite() && fnew <= fy + lin + 0.5 * lipschitz * sq + 1e-12 * fy.abs() {
                break (nw, nb, fnew);
            }
            if lipschitz > 1e300 {
                return Err(Error::NonFinite("elastic-net loss".into()));
            }
            lipschitz *= 2.0;
        };

        let objective = fnew + penalty(&nw);
        let change = nw
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs())
            .fold((nb - b).abs(), f64::max);

        if objective > prev_objective {
            // restart momentum from the last accepted point
            momentum = 1.0;
            yw.clone_from(&w);
            yb = b;
            prev_objective = f64::INFINITY;
            continue;
        }
        let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let beta = (momentum - 1.0) / next_momentum;
        yw = nw.iter().zip(&w).map(|(n, o)| n + beta * (n - o)).collect();
        yb = nb + beta * (nb - b);
        momentum = next_momentum;
        w = nw;
        b = nb;
        prev_objective = objective;
        if change < config.tol {
            return Ok(LinearFit {
                weights: w,
                intercept: b,
                iterations: iteration,
            });
        }
    }
    Ok(LinearFit {
        weights: w,
        intercept: b,
        iterations: config.max_iter,
    })
}

/// Per-session linear model over scaled behaviour and one-hot context, one
/// independent elastic-net fit per target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdEnet {
    pub config: EnetConfig,
    pub vocab: VocabSizes,
    /// Shape `[4, width]`.
    pub weights: Tensor,
    /// Shape `[4]`.
    pub intercepts: Tensor,
    pub iterations: [usize; 4],
}

/// Start column of each group in `ENET_FEATURE_GROUPS`, then the total width.
fn offsets(v: &VocabSizes) -> [usize; 7] {
    let sizes = [BEHAVIOR_DIM, v.hour, v.weekday, v.yearday, v.region, v.game];
    let mut o = [0; 7];
    for g in 0..6 {
        o[g + 1] = o[g] + sizes[g];
    }
    o
}

fn design_width(v: &VocabSizes) -> usize {
    offsets(v)[6]
}

fn design_row(v: &VocabSizes, trace: &FeaturizedTrace, t: usize) -> Result<Row> {
    let o = offsets(v);
    let sizes = [v.hour, v.weekday, v.yearday, v.region, v.game];
    let idx = [
        trace.env[t][0],
        trace.env[t][1],
        trace.env[t][2],
        trace.env[t][3],
        trace.game_idx,
    ];
    let mut active = Vec::with_capacity(5);
    for g in 0..5 {
        if idx[g] >= sizes[g] {
            return Err(Error::IndexOutOfRange {
                what: format!("{} vocabulary", ENET_FEATURE_GROUPS[g + 1]),
                index: idx[g],
                size: sizes[g],
            });
        }
        active.push(o[g + 1] + idx[g]);
    }
    Ok(Row {
        dense: trace.behavior[t].to_vec(),
        active,
    })
}

impl TdEnet {
    pub fn width(&self) -> usize {
        design_width(&self.vocab)
    }

    /// Fits the four targets on `train`; ch through a logistic link.
    pub fn fit(train: &[FeaturizedTrace], vocab: VocabSizes, config: EnetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = design_width(&vocab);
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        let mut ab_valid = Vec::new();
        for tr in train {
            check_lengths(tr)?;
            for t in 0..tr.len() {
                rows.push(design_row(&vocab, tr, t)?);
                targets.push(tr.targets[t]);
                ab_valid.push(tr.ab_mask[t]);
            }
        }
        if rows.is_empty() {
            return Err(Error::Empty("no training sessions".into()));
        }
        let ab_rows: Vec<Row> = rows
            .iter()
            .zip(&ab_valid)
            .filter(|(_, &v)| v)
            .map(|(r, _)| r.clone())
            .collect();
        let ab_y: Vec<f64> = targets
            .iter()
            .zip(&ab_valid)
            .filter(|(_, &v)| v)
            .map(|(y, _)| y[3])
            .collect();

        use rayon::prelude::*;
        let fits: Vec<LinearFit> = (0..4)
            .into_par_iter()
            .map(|k| {
                let link = if k == 0 { Link::Logistic } else { Link::Identity };
                let s = crate::seed::mix_seed(seed, k as u64, 0);
                if k == 3 {
                    if ab_rows.is_empty() {
                        return Ok(LinearFit {
                            weights: vec![0.0; d],
                            intercept: 0.0,
                            iterations: 0,
                        });
                    }
                    fit_linear(&ab_rows, &ab_y, d, link, &config, s)
                } else {
                    let y: Vec<f64> = targets.iter().map(|t| t[k]).collect();
                    fit_linear(&rows, &y, d, link, &config, s)
                }
            })
            .collect::<Result<_>>()?;

        let mut weights = Tensor::zeros(&[4, d]);
        let mut intercepts = Tensor::zeros(&[4]);
        let mut iterations = [0; 4];
        for (k, f) in fits.into_iter().enumerate() {
            weights.row_mut(k).copy_from_slice(&f.weights);
            intercepts.data_mut()[k] = f.intercept;
            iterations[k] = f.iterations;
        }
        Ok(TdEnet {
            config,
            vocab,
            weights,
            intercepts,
            iterations,
        })
    }

    /// Weights of target `k` over column group `group` of `ENET_FEATURE_GROUPS`.
    pub fn group_weights(&self, k: usize, group: usize) -> &[f64] {
        let o = offsets(&self.vocab);
        &self.weights.row(k)[o[group]..o[group + 1]]
    }
}

impl Predictor for TdEnet {
    fn predict(&self, trace: &FeaturizedTrace) -> Result<Vec<StepPrediction>> {
        check_lengths(trace)?;
        (0..trace.len())
            .map(|t| {
                let row = design_row(&self.vocab, trace, t)?;
                Ok(std::array::from_fn(|k| {
                    let eta = row.dot(self.weights.row(k)) + self.intercepts.data()[k];
                    if k == 0 {
                        sigmoid(eta)
                    } else {
                        eta
                    }
                }))
            })
            .collect()
    }
}

impl Parameters for TdEnet {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("weights".into(), &self.weights),
            ("intercepts".into(), &self.intercepts),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weights, &mut self.intercepts]
    }
}
