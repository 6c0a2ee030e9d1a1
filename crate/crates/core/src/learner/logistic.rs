use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed, Rng};

use super::{softmax_cross_entropy, Learner};

/// Multinomial logistic regression, zero-initialized.
///
/// Parameters are laid out as the `n_classes × n_features` weight matrix
/// (row-major) followed by `n_classes` biases.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    n_features: usize,
    n_classes: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    rng: Rng,
}

impl LogisticRegression {
    pub fn new(n_features: usize, n_classes: usize, seed: u64) -> Result<Self> {
        if n_features == 0 || n_classes < 2 {
            return Err(Error::invalid(format!(
                "logistic regression needs >= 1 feature and >= 2 classes, got {n_features} and {n_classes}"
            )));
        }
        Ok(Self {
            n_features,
            n_classes,
            weights: vec![0.0; n_features * n_classes],
            bias: vec![0.0; n_classes],
            rng: rng_from_seed(derive_seed(seed, "learner-shuffle", 0)),
        })
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

impl Learner for LogisticRegression {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn reset(&mut self, seed: u64) {
        self.weights.fill(0.0);
        self.bias.fill(0.0);
        self.rng = rng_from_seed(derive_seed(seed, "learner-shuffle", 0));
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        let (w, b) = params.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
        Ok(())
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.n_features)
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    }

    fn loss_and_gradient(&self, x: &[f64], y: usize) -> (f64, Vec<f64>) {
        let (loss, probs) = softmax_cross_entropy(&self.logits(x), y);
        let mut grad = vec![0.0; self.n_params()];
        let (gw, gb) = grad.split_at_mut(self.weights.len());
        for (k, &p) in probs.iter().enumerate() {
            let dz = p - f64::from(u8::from(k == y));
            gb[k] = dz;
            for (g, &xi) in gw[k * self.n_features..(k + 1) * self.n_features].iter_mut().zip(x) {
                *g = dz * xi;
            }
        }
        (loss, grad)
    }

    fn sgd_step(&mut self, x: &[f64], y: usize, lr: f64) -> f64 {
        let (loss, probs) = softmax_cross_entropy(&self.logits(x), y);
        for (k, &p) in probs.iter().enumerate() {
            let dz = p - f64::from(u8::from(k == y));
            self.bias[k] -= lr * dz;
            for (w, &xi) in self.weights[k * self.n_features..(k + 1) * self.n_features]
                .iter_mut()
                .zip(x)
            {
                *w -= lr * dz * xi;
            }
        }
        loss
    }

    fn shuffle_rng(&mut self) -> &mut Rng {
        &mut self.rng
    }
}
