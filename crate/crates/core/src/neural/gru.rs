//! Gated recurrent unit with reset applied before the candidate projection:
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! n  = tanh(W_n x + U_n (r ⊙ h) + b_n)
//! h' = z ⊙ h + (1 - z) ⊙ n
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dense::sigmoid;
use super::params::Parameters;
use super::tensor::{matvec_add, matvec_t_add, outer_add};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_n: Tensor,
    pub u_n: Tensor,
    pub b_n: Tensor,
}

/// Activations of one step, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStep {
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    /// r ⊙ h_prev
    pub rh: Vec<f64>,
    pub h: Vec<f64>,
}

impl GruCell {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        GruCell {
            w_z: Tensor::glorot(&[hidden, input], rng),
            u_z: Tensor::glorot(&[hidden, hidden], rng),
            b_z: Tensor::zeros(&[hidden]),
            w_r: Tensor::glorot(&[hidden, input], rng),
            u_r: Tensor::glorot(&[hidden, hidden], rng),
            b_r: Tensor::zeros(&[hidden]),
            w_n: Tensor::glorot(&[hidden, input], rng),
            u_n: Tensor::glorot(&[hidden, hidden], rng),
            b_n: Tensor::zeros(&[hidden]),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let m = |r, c| Tensor::zeros(&[r, c]);
        GruCell {
            w_z: m(hidden, input),
            u_z: m(hidden, hidden),
            b_z: Tensor::zeros(&[hidden]),
            w_r: m(hidden, input),
            u_r: m(hidden, hidden),
            b_r: Tensor::zeros(&[hidden]),
            w_n: m(hidden, input),
            u_n: m(hidden, hidden),
            b_n: Tensor::zeros(&[hidden]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.b_z.len()
    }

    /// Checked single step.
    pub fn forward(&self, x: &[f64], h_prev: &[f64]) -> Result<GruStep> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(&[x.len()], self.w_z.shape(), "gru input vs W"));
        }
        if h_prev.len() != self.hidden_dim() {
            return Err(Error::shape(&[h_prev.len()], self.u_z.shape(), "gru state vs U"));
        }
        Ok(self.step(x, h_prev))
    }

    /// Unchecked single step.
    pub fn step(&self, x: &[f64], h_prev: &[f64]) -> GruStep {
        let (i, d) = (self.input_dim(), self.hidden_dim());
        let gate = |w: &Tensor, u: &Tensor, b: &Tensor, h: &[f64]| {
            let mut a = b.data().to_vec();
            matvec_add(w.data(), i, x, &mut a);
            matvec_add(u.data(), d, h, &mut a);
            a
        };
        let mut z = gate(&self.w_z, &self.u_z, &self.b_z, h_prev);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));
        let mut r = gate(&self.w_r, &self.u_r, &self.b_r, h_prev);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut n = gate(&self.w_n, &self.u_n, &self.b_n, &rh);
        n.iter_mut().for_each(|v| *v = v.tanh());
        let h = (0..d).map(|k| z[k] * h_prev[k] + (1.0 - z[k]) * n[k]).collect();
        GruStep {
            h_prev: h_prev.to_vec(),
            z,
            r,
            n,
            rh,
            h,
        }
    }

    /// Backpropagates `dh` (gradient w.r.t. the step's output state) through
    /// one step. Parameter gradients accumulate into `grad`, the input
    /// gradient is added to `dx`, and the gradient w.r.t. `h_prev` is returned.
    pub fn backward(
        &self,
        x: &[f64],
        step: &GruStep,
        dh: &[f64],
        grad: &mut GruCell,
        dx: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let (i, d) = (self.input_dim(), self.hidden_dim());
        let mut dh_prev: Vec<f64> = (0..d).map(|k| dh[k] * step.z[k]).collect();
        let dz_pre: Vec<f64> = (0..d)
            .map(|k| dh[k] * (step.h_prev[k] - step.n[k]) * step.z[k] * (1.0 - step.z[k]))
            .collect();
        let dn_pre: Vec<f64> = (0..d)
            .map(|k| dh[k] * (1.0 - step.z[k]) * (1.0 - step.n[k] * step.n[k]))
            .collect();

        let mut d_rh = vec![0.0; d];
        matvec_t_add(self.u_n.data(), d, &dn_pre, &mut d_rh);
        let dr_pre: Vec<f64> = (0..d)
            .map(|k| d_rh[k] * step.h_prev[k] * step.r[k] * (1.0 - step.r[k]))
            .collect();
        for k in 0..d {
            dh_prev[k] += d_rh[k] * step.r[k];
        }

        let acc = |g: &mut Tensor, v: &[f64]| g.data_mut().iter_mut().zip(v).for_each(|(a, b)| *a += b);
        acc(&mut grad.b_z, &dz_pre);
        acc(&mut grad.b_r, &dr_pre);
        acc(&mut grad.b_n, &dn_pre);
        outer_add(grad.w_z.data_mut(), &dz_pre, x);
        outer_add(grad.w_r.data_mut(), &dr_pre, x);
        outer_add(grad.w_n.data_mut(), &dn_pre, x);
        outer_add(grad.u_z.data_mut(), &dz_pre, &step.h_prev);
        outer_add(grad.u_r.data_mut(), &dr_pre, &step.h_prev);
        outer_add(grad.u_n.data_mut(), &dn_pre, &step.rh);

        matvec_t_add(self.u_z.data(), d, &dz_pre, &mut dh_prev);
        matvec_t_add(self.u_r.data(), d, &dr_pre, &mut dh_prev);
        if let Some(dx) = dx {
            matvec_t_add(self.w_z.data(), i, &dz_pre, dx);
            matvec_t_add(self.w_r.data(), i, &dr_pre, dx);
            matvec_t_add(self.w_n.data(), i, &dn_pre, dx);
        }
        dh_prev
    }

    /// Runs the cell over a sequence from a zero state.
    pub fn run(&self, xs: &[Vec<f64>]) -> Vec<GruStep> {
        let mut h = vec![0.0; self.hidden_dim()];
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let s = self.step(x, &h);
            h.clone_from(&s.h);
            steps.push(s);
        }
        steps
    }

    /// Backpropagation through time given per-step output gradients.
    /// Returns per-step input gradients.
    pub fn backward_sequence(
        &self,
        xs: &[Vec<f64>],
        steps: &[GruStep],
        dhs: &[Vec<f64>],
        grad: &mut GruCell,
    ) -> Vec<Vec<f64>> {
        let d = self.hidden_dim();
        let mut carry = vec![0.0; d];
        let mut dxs = vec![vec![0.0; self.input_dim()]; xs.len()];
        for t in (0..xs.len()).rev() {
            let dh: Vec<f64> = (0..d).map(|k| dhs[t][k] + carry[k]).collect();
            carry = self.backward(&xs[t], &steps[t], &dh, grad, Some(&mut dxs[t]));
        }
        dxs
    }
}

impl Parameters for GruCell {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_z".into(), &self.w_z),
            ("u_z".into(), &self.u_z),
            ("b_z".into(), &self.b_z),
            ("w_r".into(), &self.w_r),
            ("u_r".into(), &self.u_r),
            ("b_r".into(), &self.b_r),
            ("w_n".into(), &self.w_n),
            ("u_n".into(), &self.u_n),
            ("b_n".into(), &self.b_n),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_n,
            &mut self.u_n,
            &mut self.b_n,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::{grad_check, grad_check_vector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_halve_the_state() {
        let cell = GruCell::zeros(3, 4);
        let h = [0.4, -1.0, 2.0, 0.0];
        let step = cell.forward(&[1.0, -2.0, 3.0], &h).unwrap();
        assert_eq!(step.h, vec![0.2, -0.5, 1.0, 0.0]);
    }

    #[test]
    fn shape_errors() {
        let cell = GruCell::zeros(3, 4);
        assert!(cell.forward(&[1.0; 2], &[0.0; 4]).is_err());
        assert!(cell.forward(&[1.0; 3], &[0.0; 5]).is_err());
    }

    fn sequence(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..len)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn later_inputs_do_not_change_earlier_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cell = GruCell::new(3, 5, &mut rng);
        let xs = sequence(&mut rng, 6, 3);
        let mut ys = xs.clone();
        ys[3] = vec![9.0, -9.0, 4.0];
        let a = cell.run(&xs);
        let b = cell.run(&ys);
        for t in 0..3 {
            assert_eq!(a[t].h, b[t].h);
        }
        assert_ne!(a[3].h, b[3].h);
    }

    #[test]
    fn bptt_matches_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cell = GruCell::new(3, 4, &mut rng);
            let xs = sequence(&mut rng, 5, 3);
            let weights: Vec<Vec<f64>> = sequence(&mut rng, 5, 4);
            let loss = |c: &GruCell| -> f64 {
                c.run(&xs)
                    .iter()
                    .zip(&weights)
                    .map(|(s, w)| s.h.iter().zip(w).map(|(h, w)| h * w).sum::<f64>())
                    .sum()
            };
            let steps = cell.run(&xs);
            let mut grad = cell.zeros_like();
            let dxs = cell.backward_sequence(&xs, &steps, &weights, &mut grad);
            let check = grad_check(&cell, &grad, loss, 1e-5);
            assert!(check.max_rel_error < 1e-5, "seed {seed}: {check:?}");

            let flat: Vec<f64> = xs.iter().flatten().copied().collect();
            let dflat: Vec<f64> = dxs.iter().flatten().copied().collect();
            let input_loss = |v: &[f64]| {
                let seq: Vec<Vec<f64>> = v.chunks(3).map(<[f64]>::to_vec).collect();
                cell.run(&seq)
                    .iter()
                    .zip(&weights)
                    .map(|(s, w)| s.h.iter().zip(w).map(|(h, w)| h * w).sum::<f64>())
                    .sum()
            };
            assert!(grad_check_vector(&flat, &dflat, input_loss, 1e-5) < 1e-5);
        }
    }
}
