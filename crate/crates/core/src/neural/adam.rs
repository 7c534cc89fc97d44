use serde::{Deserialize, Serialize};

use super::params::Parameters;
use super::Tensor;
use crate::error::{Error, Result};

/// Bias-corrected Adam optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new<P: Parameters>(params: &P, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .named_params()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Applies one update. Fails without touching `params` when any gradient
    /// entry is non-finite or shapes disagree.
    pub fn update<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = grads.named_params();
        if grads.len() != self.first.len() {
            return Err(Error::shape(
                &[grads.len()],
                &[self.first.len()],
                "adam parameter count",
            ));
        }
        for ((name, g), m) in grads.iter().zip(&self.first) {
            if g.shape() != m.shape() {
                return Err(Error::shape(g.shape(), m.shape(), format!("adam moments for {name}")));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, (_, g)), m), v) in params
            .params_mut()
            .into_iter()
            .zip(&grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, Dense};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer() -> Dense {
        Dense::new(3, 2, Activation::Linear, &mut ChaCha8Rng::seed_from_u64(4))
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = layer();
        let before = p.clone();
        let g = p.zeros_like();
        let mut adam = AdamState::new(&p, 0.01);
        for _ in 0..10 {
            adam.update(&mut p, &g).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let mut p = layer();
        let mut g = p.zeros_like();
        g.params_mut().into_iter().for_each(|t| t.fill(0.37));
        let lr = 0.001;
        let mut adam = AdamState::new(&p, lr);
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = p.weight.data()[0];
            adam.update(&mut p, &g).unwrap();
            last = before - p.weight.data()[0];
        }
        assert!((last - lr).abs() / lr < 1e-6, "{last}");
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = layer();
        let mut g = p.zeros_like();
        g.bias.data_mut()[1] = f64::NAN;
        let before = p.clone();
        let mut adam = AdamState::new(&p, 0.01);
        assert!(adam.update(&mut p, &g).is_err());
        assert_eq!(p, before);
    }

    #[test]
    fn identical_runs_are_identical() {
        let run = || {
            let mut p = layer();
            let mut g = p.zeros_like();
            g.weight.data_mut()[2] = -0.5;
            let mut adam = AdamState::new(&p, 0.05);
            for _ in 0..50 {
                adam.update(&mut p, &g).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
