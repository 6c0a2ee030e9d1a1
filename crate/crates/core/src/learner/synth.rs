//! Class-conditional Gaussian tasks with a planted per-example margin.
//!
//! Class means sit on a circle in the first two coordinates (on a line when
//! there is a single feature), spaced so that every mean is at distance 1
//! from its nearest Bayes boundary. Each example is its class mean plus
//! isotropic Gaussian noise with standard deviation `margin_decay`: small
//! values keep examples far from the boundary, large values spread them
//! across it. A `noise_rate` fraction of gold labels is then replaced by a
//! uniformly drawn other class.
//!
//! The planted margin is the signed distance from the example to the Bayes
//! boundary of its gold class (positive on the gold side), so a flipped label
//! usually carries a negative margin.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::seed::derived_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthTaskConfig {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub margin_decay: f64,
    pub noise_rate: f64,
    /// Set by the caller, never read from a config file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SynthTaskConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_dev: 200,
            n_test: 1000,
            n_features: 2,
            n_classes: 2,
            margin_decay: 0.5,
            noise_rate: 0.0,
            seed: 0,
        }
    }
}

impl SynthTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_dev == 0 || self.n_test == 0 {
            return Err(Error::invalid("synthetic split sizes must be at least 1"));
        }
        if self.n_features == 0 {
            return Err(Error::invalid("n_features must be at least 1"));
        }
        if self.n_classes < 2 {
            return Err(Error::invalid("n_classes must be at least 2"));
        }
        if !(self.margin_decay > 0.0 && self.margin_decay.is_finite()) {
            return Err(Error::invalid(format!(
                "margin_decay must be positive, got {}",
                self.margin_decay
            )));
        }
        if !(0.0..=0.3).contains(&self.noise_rate) {
            return Err(Error::invalid(format!(
                "noise_rate must lie in [0, 0.3], got {}",
                self.noise_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTask {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

fn class_means(n_features: usize, n_classes: usize) -> Vec<Vec<f64>> {
    (0..n_classes)
        .map(|k| {
            let mut mu = vec![0.0; n_features];
            if n_features == 1 {
                mu[0] = 2.0 * k as f64 - (n_classes - 1) as f64;
            } else {
                let radius = 1.0 / (std::f64::consts::PI / n_classes as f64).sin();
                let angle = 2.0 * std::f64::consts::PI * k as f64 / n_classes as f64;
                mu[0] = radius * angle.cos();
                mu[1] = radius * angle.sin();
            }
            mu
        })
        .collect()
}

/// Signed distance from `x` to the nearest boundary of class `y`'s Voronoi cell.
fn signed_margin(x: &[f64], y: usize, means: &[Vec<f64>]) -> f64 {
    let mu_y = &means[y];
    means
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != y)
        .map(|(_, mu_k)| {
            let diff: Vec<f64> = mu_y.iter().zip(mu_k).map(|(a, b)| a - b).collect();
            let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
            let mid: Vec<f64> = mu_y.iter().zip(mu_k).map(|(a, b)| 0.5 * (a + b)).collect();
            diff.iter()
                .zip(x.iter().zip(&mid))
                .map(|(d, (xi, m))| d * (xi - m))
                .sum::<f64>()
                / norm
        })
        .fold(f64::INFINITY, f64::min)
}

fn sample_split(cfg: &SynthTaskConfig, split: &str, n: usize) -> Result<Dataset> {
    let mut rng = derived_rng(cfg.seed, &format!("synth-{split}"), 0);
    let means = class_means(cfg.n_features, cfg.n_classes);
    let mut features = Vec::with_capacity(n * cfg.n_features);
    let mut labels = Vec::with_capacity(n);
    let mut margins = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.random_range(0..cfg.n_classes);
        let x: Vec<f64> = means[class]
            .iter()
            .map(|m| m + cfg.margin_decay * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut gold = class;
        if rng.random::<f64>() < cfg.noise_rate {
            let shift = rng.random_range(1..cfg.n_classes);
            gold = (class + shift) % cfg.n_classes;
        }
        margins.push(signed_margin(&x, gold, &means));
        features.extend_from_slice(&x);
        labels.push(gold);
    }
    Dataset::new(cfg.n_features, cfg.n_classes, features, labels)?.with_planted_margin(margins)
}

pub fn make_synthetic_task(cfg: &SynthTaskConfig) -> Result<SynthTask> {
    cfg.validate()?;
    Ok(SynthTask {
        train: sample_split(cfg, "train", cfg.n_train)?,
        dev: sample_split(cfg, "dev", cfg.n_dev)?,
        test: sample_split(cfg, "test", cfg.n_test)?,
    })
}
