use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::Parameters;
use super::tensor::{matvec_add, matvec_t_add, outer_add};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            // softplus' = sigmoid(x) = 1 - exp(-softplus(x))
            Activation::Softplus => -(-y).exp_m1(),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Fully connected layer `y = activation(W x + b)` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Dense {
    pub fn new<R: Rng>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        Dense {
            weight: Tensor::glorot(&[output, input], rng),
            bias: Tensor::zeros(&[output]),
            activation,
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape(weight.shape(), bias.shape(), "dense weight vs bias"));
        }
        Ok(Dense {
            weight,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Checked forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(&[x.len()], self.weight.shape(), "dense input vs weight"));
        }
        let mut y = vec![0.0; self.output_dim()];
        self.forward_into(x, &mut y);
        Ok(y)
    }

    /// Unchecked forward pass into `y`.
    #[inline]
    pub fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(self.bias.data());
        matvec_add(self.weight.data(), self.input_dim(), x, y);
        for v in y.iter_mut() {
            *v = self.activation.apply(*v);
        }
    }

    /// Accumulates parameter gradients into `grad` given the layer input `x`,
    /// its output `y` and the upstream gradient `dy`; adds the input gradient
    /// to `dx` when requested.
    pub fn backward(&self, x: &[f64], y: &[f64], dy: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        let dpre: Vec<f64> = y
            .iter()
            .zip(dy)
            .map(|(&yi, &gi)| gi * self.activation.derivative_from_output(yi))
            .collect();
        self.backward_pre(x, &dpre, grad, dx);
    }

    /// Same as [`Dense::backward`] with the gradient already taken with
    /// respect to the pre-activation.
    pub fn backward_pre(&self, x: &[f64], dpre: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        for (b, g) in grad.bias.data_mut().iter_mut().zip(dpre) {
            *b += g;
        }
        outer_add(grad.weight.data_mut(), dpre, x);
        if let Some(dx) = dx {
            matvec_t_add(self.weight.data(), self.input_dim(), dpre, dx);
        }
    }
}

impl Parameters for Dense {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Lookup table of learned vectors for a categorical variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub table: Tensor,
}

impl Embedding {
    pub fn new<R: Rng>(rows: usize, dim: usize, rng: &mut R) -> Self {
        Embedding {
            table: Tensor::uniform(&[rows, dim], 0.05, rng),
        }
    }

    pub fn rows(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn lookup(&self, index: usize) -> Result<&[f64]> {
        if index >= self.rows() {
            return Err(Error::IndexOutOfRange {
                what: "embedding table".into(),
                index,
                size: self.rows(),
            });
        }
        Ok(self.table.row(index))
    }

    /// Adds `dy` into row `index` of `grad`; other rows are untouched.
    pub fn backward(&self, index: usize, dy: &[f64], grad: &mut Embedding) {
        for (g, d) in grad.table.row_mut(index).iter_mut().zip(dy) {
            *g += d;
        }
    }
}

impl Parameters for Embedding {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![("table".into(), &self.table)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.table]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::{grad_check, GradCheck};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_pass_input_through() {
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let d = Dense::from_parts(w, Tensor::zeros(&[3]), Activation::Linear).unwrap();
        assert_eq!(d.forward(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_preactivation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dense::new(4, 3, Activation::Linear, &mut rng);
        assert_eq!(d.forward(&[0.0; 4]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dense::new(4, 3, Activation::Relu, &mut rng);
        let msg = d.forward(&[1.0; 5]).unwrap_err().to_string();
        assert!(msg.contains("[5]") && msg.contains("[3, 4]"), "{msg}");
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        for (seed, act) in [
            (1, Activation::Linear),
            (2, Activation::Tanh),
            (3, Activation::Sigmoid),
            (4, Activation::Softplus),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layer = Dense::new(5, 4, act, &mut rng);
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |p: &Dense| -> f64 { p.forward(&x).unwrap().iter().zip(&c).map(|(y, c)| y * c).sum() };
            let y = layer.forward(&x).unwrap();
            let mut grad = layer.zeros_like();
            let mut dx = vec![0.0; 5];
            layer.backward(&x, &y, &c, &mut grad, Some(&mut dx));
            let GradCheck { max_rel_error, .. } = grad_check(&layer, &grad, loss, 1e-5);
            let tol = if act == Activation::Linear { 1e-6 } else { 1e-4 };
            assert!(max_rel_error < tol, "{act:?}: {max_rel_error}");
        }
    }

    #[test]
    fn embedding_gradient_touches_only_used_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = Embedding::new(6, 3, &mut rng);
        assert_eq!(e.lookup(2).unwrap(), e.table.row(2));
        assert!(e.lookup(6).is_err());
        let mut g = e.zeros_like();
        e.backward(4, &[1.0, 2.0, 3.0], &mut g);
        e.backward(4, &[1.0, 2.0, 3.0], &mut g);
        assert_eq!(g.table.row(4), [2.0, 4.0, 6.0]);
        for r in [0, 1, 2, 3, 5] {
            assert_eq!(g.table.row(r), [0.0; 3]);
        }
    }
}
