//! Trainable classifiers behind one interface, plus synthetic tasks.
//!
//! Learners train by plain per-example SGD on cross-entropy with a constant
//! learning rate. Every learner owns a seeded shuffling stream, so the seed,
//! the sequence of training subsets and the learning rates fully determine
//! its parameters.

mod logistic;
mod mlp;
mod synth;

pub use logistic::LogisticRegression;
pub use mlp::Mlp;
pub use synth::{make_synthetic_task, SynthTask, SynthTaskConfig};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::seed::Rng;

pub trait Learner: Send {
    fn n_features(&self) -> usize;

    fn n_classes(&self) -> usize;

    /// Restores the deterministic initial state for `seed`.
    fn reset(&mut self, seed: u64);

    /// Flattened parameters.
    fn params(&self) -> Vec<f64>;

    fn set_params(&mut self, params: &[f64]) -> Result<()>;

    /// Unnormalized class scores for one row.
    fn logits(&self, x: &[f64]) -> Vec<f64>;

    /// Cross-entropy of one example and its gradient with respect to [`Learner::params`].
    fn loss_and_gradient(&self, x: &[f64], y: usize) -> (f64, Vec<f64>);

    /// One SGD update on a single example; returns the pre-update loss.
    fn sgd_step(&mut self, x: &[f64], y: usize, lr: f64) -> f64;

    /// Stream used to shuffle each epoch.
    fn shuffle_rng(&mut self) -> &mut Rng;

    /// Highest-scoring class; ties go to the lowest class index.
    fn predict_one(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    /// One shuffled pass of SGD over `indices`; returns the mean loss.
    fn train_epoch(&mut self, data: &Dataset, indices: &[usize], lr: f64) -> Result<f64> {
        check_compatible(self.n_features(), self.n_classes(), data)?;
        if indices.is_empty() {
            return Err(Error::invalid("cannot train on an empty subset"));
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        if let Some(&k) = indices.iter().find(|&&k| k >= data.len()) {
            return Err(Error::invalid(format!("index {k} out of range for {} examples", data.len())));
        }
        let mut order = indices.to_vec();
        order.shuffle(self.shuffle_rng());
        let mut total = 0.0;
        for &k in &order {
            total += self.sgd_step(data.row(k), data.labels()[k], lr);
        }
        let mean = total / order.len() as f64;
        if !mean.is_finite() {
            return Err(Error::invalid(format!("training diverged (mean loss {mean})")));
        }
        Ok(mean)
    }

    /// Predicted labels for the rows at `indices`.
    fn predict(&self, data: &Dataset, indices: &[usize]) -> Result<Vec<usize>> {
        if data.n_features() != self.n_features() {
            return Err(Error::invalid(format!(
                "learner expects {} features, data has {}",
                self.n_features(),
                data.n_features()
            )));
        }
        if let Some(&k) = indices.iter().find(|&&k| k >= data.len()) {
            return Err(Error::invalid(format!("index {k} out of range for {} examples", data.len())));
        }
        Ok(indices.iter().map(|&k| self.predict_one(data.row(k))).collect())
    }

    fn predict_all(&self, data: &Dataset) -> Result<Vec<usize>> {
        let all: Vec<usize> = (0..data.len()).collect();
        self.predict(data, &all)
    }
}

fn check_compatible(n_features: usize, n_classes: usize, data: &Dataset) -> Result<()> {
    if data.n_features() != n_features {
        return Err(Error::invalid(format!(
            "learner expects {n_features} features, data has {}",
            data.n_features()
        )));
    }
    if data.n_classes() > n_classes {
        return Err(Error::invalid(format!(
            "learner has {n_classes} classes, data has {}",
            data.n_classes()
        )));
    }
    Ok(())
}

pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

/// `(log-sum-exp(z) - z[y], softmax(z))`
pub(crate) fn softmax_cross_entropy(z: &[f64], y: usize) -> (f64, Vec<f64>) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = max + sum.ln() - z[y];
    (loss, exps.into_iter().map(|e| e / sum).collect())
}

/// Fraction of `indices` whose prediction matches the label.
pub fn accuracy(learner: &dyn Learner, data: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Ok(f64::NAN);
    }
    let pred = learner.predict(data, indices)?;
    let hits = pred
        .iter()
        .zip(indices)
        .filter(|(p, &k)| **p == data.labels()[k])
        .count();
    Ok(hits as f64 / indices.len() as f64)
}

fn default_hidden() -> usize {
    16
}

/// Which built-in learner to construct.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", try_from = "RawLearnerSpec")]
pub enum LearnerSpec {
    #[default]
    Logistic,
    Mlp { hidden: usize },
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum LearnerKind {
    Logistic,
    Mlp,
}

// Flat form so nested errors keep their field path.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLearnerSpec {
    kind: LearnerKind,
    hidden: Option<usize>,
}

impl TryFrom<RawLearnerSpec> for LearnerSpec {
    type Error = &'static str;

    fn try_from(raw: RawLearnerSpec) -> std::result::Result<Self, Self::Error> {
        match raw.kind {
            LearnerKind::Logistic if raw.hidden.is_some() => Err("the logistic learner has no `hidden` layer"),
            LearnerKind::Logistic => Ok(LearnerSpec::Logistic),
            LearnerKind::Mlp => Ok(LearnerSpec::Mlp {
                hidden: raw.hidden.unwrap_or_else(default_hidden),
            }),
        }
    }
}

impl LearnerSpec {
    pub fn build(&self, n_features: usize, n_classes: usize, seed: u64) -> Result<Box<dyn Learner>> {
        Ok(match *self {
            LearnerSpec::Logistic => Box::new(LogisticRegression::new(n_features, n_classes, seed)?),
            LearnerSpec::Mlp { hidden } => Box::new(Mlp::new(n_features, hidden, n_classes, seed)?),
        })
    }

    pub fn name(&self) -> String {
        match self {
            LearnerSpec::Logistic => "logistic".to_string(),
            LearnerSpec::Mlp { hidden } => format!("mlp-{hidden}"),
        }
    }
}
