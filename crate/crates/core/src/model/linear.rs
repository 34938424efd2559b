use crate::rng::CounterRng;

/// Dense affine map `y = W x + b`, `W` stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Weights and biases uniform in `+-scale / sqrt(in_dim)`.
    pub fn uniform(in_dim: usize, out_dim: usize, scale: f64, rng: &mut CounterRng) -> Self {
        let bound = scale / (in_dim.max(1) as f64).sqrt();
        let mut l = Self::zeros(in_dim, out_dim);
        for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
            *w = rng.uniform(-bound, bound);
        }
        l
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }

    /// Accumulate `scale * dL/dW` and `scale * dL/db` into `self` given the
    /// input and the upstream gradient.
    pub fn accumulate(&mut self, x: &[f64], grad_out: &[f64], scale: f64) {
        for ((row, b), g) in self.weight.chunks_exact_mut(self.in_dim).zip(&mut self.bias).zip(grad_out) {
            let gs = g * scale;
            if gs == 0.0 {
                continue;
            }
            *b += gs;
            for (w, xi) in row.iter_mut().zip(x) {
                *w += gs * xi;
            }
        }
    }
}
