use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed, Rng};

use super::{softmax_cross_entropy, Learner};

/// One-hidden-layer tanh network with a softmax output.
///
/// Parameter layout: `w1` (hidden × features), `b1` (hidden),
/// `w2` (classes × hidden), `b2` (classes). Weights start from a seeded
/// Glorot-uniform draw, biases from zero.
#[derive(Debug, Clone)]
pub struct Mlp {
    n_features: usize,
    hidden: usize,
    n_classes: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    rng: Rng,
}

struct Forward {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl Mlp {
    pub fn new(n_features: usize, hidden: usize, n_classes: usize, seed: u64) -> Result<Self> {
        if n_features == 0 || hidden == 0 || n_classes < 2 {
            return Err(Error::invalid(format!(
                "mlp needs >= 1 feature, >= 1 hidden unit and >= 2 classes, got {n_features}, {hidden}, {n_classes}"
            )));
        }
        let mut mlp = Self {
            n_features,
            hidden,
            n_classes,
            w1: vec![0.0; hidden * n_features],
            b1: vec![0.0; hidden],
            w2: vec![0.0; n_classes * hidden],
            b2: vec![0.0; n_classes],
            rng: rng_from_seed(0),
        };
        mlp.reset(seed);
        Ok(mlp)
    }

    fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let hidden: Vec<f64> = self
            .w1
            .chunks_exact(self.n_features)
            .zip(&self.b1)
            .map(|(w, b)| (b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()).tanh())
            .collect();
        let logits = self
            .w2
            .chunks_exact(self.hidden)
            .zip(&self.b2)
            .map(|(w, b)| b + w.iter().zip(&hidden).map(|(a, h)| a * h).sum::<f64>())
            .collect();
        Forward { hidden, logits }
    }

    /// Backpropagates one example; returns loss and gradients `(w1, b1, w2, b2)`.
    fn backward(&self, x: &[f64], y: usize) -> (f64, Vec<f64>) {
        let fwd = self.forward(x);
        let (loss, probs) = softmax_cross_entropy(&fwd.logits, y);
        let mut grad = vec![0.0; self.n_params()];
        let (g_w1, rest) = grad.split_at_mut(self.w1.len());
        let (g_b1, rest) = rest.split_at_mut(self.b1.len());
        let (g_w2, g_b2) = rest.split_at_mut(self.w2.len());

        let mut d_hidden = vec![0.0; self.hidden];
        for (k, &p) in probs.iter().enumerate() {
            let dz = p - f64::from(u8::from(k == y));
            g_b2[k] = dz;
            let row = k * self.hidden..(k + 1) * self.hidden;
            for ((g, &h), (dh, &w)) in g_w2[row.clone()]
                .iter_mut()
                .zip(&fwd.hidden)
                .zip(d_hidden.iter_mut().zip(&self.w2[row]))
            {
                *g = dz * h;
                *dh += dz * w;
            }
        }
        for (u, (&h, &dh)) in fwd.hidden.iter().zip(&d_hidden).enumerate() {
            let da = dh * (1.0 - h * h);
            g_b1[u] = da;
            for (g, &xi) in g_w1[u * self.n_features..(u + 1) * self.n_features]
                .iter_mut()
                .zip(x)
            {
                *g = da * xi;
            }
        }
        (loss, grad)
    }
}

impl Learner for Mlp {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn reset(&mut self, seed: u64) {
        let mut init = rng_from_seed(derive_seed(seed, "learner-init", 0));
        let r1 = (6.0 / (self.n_features + self.hidden) as f64).sqrt();
        let r2 = (6.0 / (self.hidden + self.n_classes) as f64).sqrt();
        self.w1.iter_mut().for_each(|w| *w = init.random_range(-r1..r1));
        self.w2.iter_mut().for_each(|w| *w = init.random_range(-r2..r2));
        self.b1.fill(0.0);
        self.b2.fill(0.0);
        self.rng = rng_from_seed(derive_seed(seed, "learner-shuffle", 0));
    }

    fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.extend_from_slice(&self.b2);
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
        let (w1, rest) = params.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.b1.len());
        let (w2, b2) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2.copy_from_slice(b2);
        Ok(())
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).logits
    }

    fn loss_and_gradient(&self, x: &[f64], y: usize) -> (f64, Vec<f64>) {
        self.backward(x, y)
    }

    fn sgd_step(&mut self, x: &[f64], y: usize, lr: f64) -> f64 {
        let (loss, grad) = self.backward(x, y);
        let (g_w1, rest) = grad.split_at(self.w1.len());
        let (g_b1, rest) = rest.split_at(self.b1.len());
        let (g_w2, g_b2) = rest.split_at(self.w2.len());
        for (p, g) in self
            .w1
            .iter_mut()
            .zip(g_w1)
            .chain(self.b1.iter_mut().zip(g_b1))
            .chain(self.w2.iter_mut().zip(g_w2))
            .chain(self.b2.iter_mut().zip(g_b2))
        {
            *p -= lr * g;
        }
        loss
    }

    fn shuffle_rng(&mut self) -> &mut Rng {
        &mut self.rng
    }
}
