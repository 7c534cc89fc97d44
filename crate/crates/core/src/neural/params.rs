use super::Tensor;

/// A bundle of trainable tensors with a stable enumeration order.
///
/// Gradients are represented by a value of the same type, so optimizers,
/// checkpoints and gradient checks work over any implementor.
pub trait Parameters: Clone {
    /// Tensors with hierarchical names, in a fixed order.
    fn named_params(&self) -> Vec<(String, &Tensor)>;

    /// Same tensors and order as [`Parameters::named_params`].
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        for p in g.params_mut() {
            p.fill(0.0);
        }
        g
    }

    fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Element-wise `self += other`.
    fn accumulate(&mut self, other: &Self) {
        let theirs: Vec<&Tensor> = other.named_params().into_iter().map(|(_, t)| t).collect();
        for (mine, theirs) in self.params_mut().into_iter().zip(theirs) {
            for (a, b) in mine.data_mut().iter_mut().zip(theirs.data()) {
                *a += b;
            }
        }
    }

    fn scale_all(&mut self, factor: f64) {
        for p in self.params_mut() {
            p.scale(factor);
        }
    }

    fn global_norm(&self) -> f64 {
        self.named_params()
            .iter()
            .map(|(_, t)| t.sum_squares())
            .sum::<f64>()
            .sqrt()
    }
}

/// Prepends `prefix.` to every name.
pub fn prefixed<'a>(prefix: &str, params: Vec<(String, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
    params.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<P: Parameters>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale_all(max_norm / norm);
    }
    norm
}

impl<P: Parameters> Parameters for Vec<P> {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.iter()
            .enumerate()
            .flat_map(|(i, p)| prefixed(&i.to_string(), p.named_params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.iter_mut().flat_map(|p| p.params_mut()).collect()
    }
}
