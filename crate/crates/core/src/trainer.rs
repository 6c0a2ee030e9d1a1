//! Training loops: fully supervised, competence-based, and ability-based
//! (DDaCLAE) selection, with a held-out dev split for early stopping.
//!
//! Every run splits the training set into a pool and a dev split. Selection,
//! the probe set, and training accuracy only ever touch the pool; the dev
//! split is used for early stopping and nothing else. When training stops
//! the learner is restored to its best-dev parameters before testing.

use std::time::{Duration, Instant};

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::ability::{estimate_ability, AbilityBounds};
use crate::curriculum::{
    cb_linear, cb_root, heuristic_difficulty_length, select_by_ability, select_by_proportion,
    CurriculumStrategy, DifficultySource, StrategyKind,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::irt::grade_responses;
use crate::learner::{accuracy, Learner};
use crate::seed::{derived_rng, Rng};

/// Fraction of the pool used when ability-based selection comes back empty.
pub const FALLBACK_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub num_epochs: usize,
    pub lr: f64,
    pub early_stop_patience: usize,
    pub dev_fraction: f64,
    pub seed: u64,
    pub strategy: CurriculumStrategy,
    #[serde(default)]
    pub ability_bounds: AbilityBounds,
}

impl TrainConfig {
    pub fn new(strategy: CurriculumStrategy, num_epochs: usize, seed: u64) -> Self {
        Self {
            num_epochs,
            lr: 0.1,
            early_stop_patience: 10,
            dev_fraction: 0.1,
            seed,
            strategy,
            ability_bounds: AbilityBounds::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_epochs == 0 {
            return Err(Error::invalid("num_epochs must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 0.5) {
            return Err(Error::invalid(format!(
                "dev_fraction must lie in (0, 0.5), got {}",
                self.dev_fraction
            )));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::invalid("early_stop_patience must be at least 1"));
        }
        AbilityBounds::new(self.ability_bounds.min, self.ability_bounds.max)?;
        self.strategy.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Probe-set ability estimate; DDaCLAE only.
    pub theta_hat: Option<f64>,
    pub theta_clamped: Option<bool>,
    pub selected_count: usize,
    /// The ability-based selection was empty and the easiest examples were used instead.
    pub fallback: bool,
    pub loss: f64,
    /// Accuracy on the whole pool after the epoch.
    pub train_acc: f64,
    pub dev_acc: f64,
    /// Selected training-set indices, ascending.
    #[serde(skip)]
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub strategy: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Number of epochs trained when dev accuracy peaked (1-based).
    pub convergence_epoch: usize,
    pub best_dev_accuracy: f64,
    pub test_accuracy: f64,
    pub train_size: usize,
    #[serde(skip)]
    pub dev_indices: Vec<usize>,
    #[serde(skip)]
    pub probe_indices: Vec<usize>,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Uniform sample of `min(n, n_train)` distinct indices, ascending.
pub fn sample_probe_set(n_train: usize, n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if n_train == 0 {
        return Err(Error::invalid("cannot sample a probe set from an empty training set"));
    }
    if n == 0 {
        return Err(Error::invalid("probe size must be at least 1"));
    }
    if n >= n_train {
        return Ok((0..n_train).collect());
    }
    let mut picked = index::sample(rng, n_train, n).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Splits `0..n` into (pool, dev), both ascending, with `round(dev_fraction * n)` dev examples.
pub fn split_dev(n: usize, dev_fraction: f64, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_dev = (dev_fraction * n as f64).round() as usize;
    if n_dev == 0 || n_dev >= n {
        return Err(Error::invalid(format!(
            "a dev fraction of {dev_fraction} leaves no dev or no training examples out of {n}"
        )));
    }
    let mut dev = index::sample(rng, n, n_dev).into_vec();
    dev.sort_unstable();
    let mut is_dev = vec![false; n];
    dev.iter().for_each(|&k| is_dev[k] = true);
    let pool = (0..n).filter(|&k| !is_dev[k]).collect();
    Ok((pool, dev))
}

/// Per-example difficulties for `source`: learned values are passed through,
/// length comes from the dataset's text, random is seeded uniform noise.
pub fn resolve_difficulties(
    source: DifficultySource,
    train: &Dataset,
    learned: Option<&[f64]>,
    seed: u64,
) -> Result<Vec<f64>> {
    let values = match source {
        DifficultySource::Learned => learned
            .ok_or_else(|| Error::invalid("learned difficulties were not provided"))?
            .to_vec(),
        DifficultySource::Length => heuristic_difficulty_length(
            train
                .texts()
                .ok_or_else(|| Error::invalid("the length heuristic needs example text"))?,
        ),
        DifficultySource::Random => {
            let mut rng = derived_rng(seed, "random-difficulty", 0);
            (0..train.len()).map(|_| rng.random::<f64>()).collect()
        }
    };
    if values.len() != train.len() {
        return Err(Error::invalid(format!(
            "{} difficulties for {} training examples",
            values.len(),
            train.len()
        )));
    }
    if values.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("difficulties must be finite"));
    }
    Ok(values)
}

enum Selector<'a> {
    Full,
    Proportion {
        schedule: fn(usize, usize, f64) -> Result<f64>,
        full_step: usize,
        c0: f64,
        difficulties: Vec<f64>,
    },
    Ability {
        difficulties: &'a [f64],
        pool_difficulties: Vec<f64>,
        probe: Vec<usize>,
        probe_difficulties: Vec<f64>,
        bounds: AbilityBounds,
    },
}

struct Selection {
    indices: Vec<usize>,
    theta: Option<(f64, bool)>,
    fallback: bool,
}

impl Selector<'_> {
    /// Training-set indices for `epoch`. Pool positions map back through `pool`.
    fn select(&self, epoch: usize, learner: &dyn Learner, train: &Dataset, pool: &[usize]) -> Result<Selection> {
        let to_train = |local: Vec<usize>| local.into_iter().map(|k| pool[k]).collect::<Vec<_>>();
        match self {
            Selector::Full => Ok(Selection {
                indices: pool.to_vec(),
                theta: None,
                fallback: false,
            }),
            Selector::Proportion {
                schedule,
                full_step,
                c0,
                difficulties,
            } => {
                let c = schedule(epoch, *full_step, *c0)?;
                Ok(Selection {
                    indices: to_train(select_by_proportion(difficulties, c)?),
                    theta: None,
                    fallback: false,
                })
            }
            Selector::Ability {
                difficulties,
                pool_difficulties,
                probe,
                probe_difficulties,
                bounds,
            } => {
                // Scoring pass only: `predict` borrows the learner immutably.
                let predicted = learner.predict(train, probe)?;
                let gold: Vec<usize> = probe.iter().map(|&k| train.labels()[k]).collect();
                let z = grade_responses(&predicted, &gold)?;
                let est = estimate_ability(&z, probe_difficulties, *bounds)?;
                let chosen: Vec<usize> = pool
                    .iter()
                    .copied()
                    .filter(|&k| difficulties[k] <= est.theta)
                    .collect();
                debug_assert_eq!(chosen, to_train(select_by_ability(pool_difficulties, est.theta)));
                if chosen.is_empty() {
                    Ok(Selection {
                        indices: to_train(select_by_proportion(pool_difficulties, FALLBACK_FRACTION)?),
                        theta: Some((est.theta, est.clamped)),
                        fallback: true,
                    })
                } else {
                    Ok(Selection {
                        indices: chosen,
                        theta: Some((est.theta, est.clamped)),
                        fallback: false,
                    })
                }
            }
        }
    }
}

fn check_inputs(learner: &dyn Learner, train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("training and test sets must be non-empty"));
    }
    if train.n_features() != learner.n_features() || test.n_features() != learner.n_features() {
        return Err(Error::invalid("learner and datasets disagree on the feature count"));
    }
    Ok(())
}

fn check_difficulties(difficulties: &[f64], train: &Dataset) -> Result<()> {
    if difficulties.len() != train.len() {
        return Err(Error::invalid(format!(
            "{} difficulties for {} training examples",
            difficulties.len(),
            train.len()
        )));
    }
    if difficulties.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("difficulties must be finite"));
    }
    Ok(())
}

fn run(
    learner: &mut dyn Learner,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    pool: Vec<usize>,
    dev: Vec<usize>,
    probe_indices: Vec<usize>,
    selector: Selector<'_>,
) -> Result<TrainResult> {
    let started = Instant::now();
    let mut epochs = Vec::with_capacity(cfg.num_epochs);
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    let mut since_best = 0;

    for epoch in 0..cfg.num_epochs {
        let sel = selector.select(epoch, learner, train, &pool)?;
        let loss = learner.train_epoch(train, &sel.indices, cfg.lr)?;
        let train_acc = accuracy(learner, train, &pool)?;
        let dev_acc = accuracy(learner, train, &dev)?;
        log::debug!(
            "{} epoch {epoch}: selected {} loss {loss:.4} dev {dev_acc:.4}",
            cfg.strategy.label(),
            sel.indices.len()
        );
        epochs.push(EpochRecord {
            epoch,
            theta_hat: sel.theta.map(|t| t.0),
            theta_clamped: sel.theta.map(|t| t.1),
            selected_count: sel.indices.len(),
            fallback: sel.fallback,
            loss,
            train_acc,
            dev_acc,
            selected: sel.indices,
        });

        if best.as_ref().is_none_or(|b| dev_acc > b.1) {
            best = Some((epoch, dev_acc, learner.params()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }

    let (best_epoch, best_dev, params) = best.expect("at least one epoch runs");
    learner.set_params(&params)?;
    let test_all: Vec<usize> = (0..test.len()).collect();
    let test_accuracy = accuracy(learner, test, &test_all)?;
    Ok(TrainResult {
        strategy: cfg.strategy.label(),
        seed: cfg.seed,
        epochs,
        convergence_epoch: best_epoch + 1,
        best_dev_accuracy: best_dev,
        test_accuracy,
        train_size: pool.len(),
        dev_indices: dev,
        probe_indices,
        wall_time: started.elapsed(),
    })
}

fn dev_split(train: &Dataset, cfg: &TrainConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    split_dev(train.len(), cfg.dev_fraction, &mut derived_rng(cfg.seed, "dev-split", 0))
}

/// Trains on the whole pool every epoch.
pub fn train_full(learner: &mut dyn Learner, train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    check_inputs(learner, train, test, cfg)?;
    let (pool, dev) = dev_split(train, cfg)?;
    run(learner, train, test, cfg, pool, dev, Vec::new(), Selector::Full)
}

/// Competence-based training with the linear or root schedule in `cfg.strategy`.
pub fn train_cb(
    learner: &mut dyn Learner,
    train: &Dataset,
    test: &Dataset,
    difficulties: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    check_inputs(learner, train, test, cfg)?;
    check_difficulties(difficulties, train)?;
    let schedule: fn(usize, usize, f64) -> Result<f64> = match cfg.strategy.kind {
        StrategyKind::CbLinear => cb_linear,
        StrategyKind::CbRoot => cb_root,
        other => {
            return Err(Error::invalid(format!(
                "train_cb needs a competence schedule, got `{}`",
                other.as_str()
            )))
        }
    };
    let (pool, dev) = dev_split(train, cfg)?;
    let selector = Selector::Proportion {
        schedule,
        full_step: cfg.strategy.competence_step(cfg.num_epochs),
        c0: cfg.strategy.c0,
        difficulties: pool.iter().map(|&k| difficulties[k]).collect(),
    };
    run(learner, train, test, cfg, pool, dev, Vec::new(), selector)
}

/// Ability-based selection: each epoch probes the learner, estimates its
/// ability, and trains on every pool example no harder than that estimate.
pub fn train_ddaclae(
    learner: &mut dyn Learner,
    train: &Dataset,
    test: &Dataset,
    difficulties: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    check_inputs(learner, train, test, cfg)?;
    check_difficulties(difficulties, train)?;
    if cfg.strategy.kind != StrategyKind::Ddaclae {
        return Err(Error::invalid(format!(
            "train_ddaclae needs the ddaclae strategy, got `{}`",
            cfg.strategy.kind.as_str()
        )));
    }
    let (pool, dev) = dev_split(train, cfg)?;
    let mut rng = derived_rng(cfg.seed, "probe-set", 0);
    let probe: Vec<usize> = sample_probe_set(pool.len(), cfg.strategy.probe_size, &mut rng)?
        .into_iter()
        .map(|k| pool[k])
        .collect();
    let selector = Selector::Ability {
        difficulties,
        pool_difficulties: pool.iter().map(|&k| difficulties[k]).collect(),
        probe_difficulties: probe.iter().map(|&k| difficulties[k]).collect(),
        probe: probe.clone(),
        bounds: cfg.ability_bounds,
    };
    run(learner, train, test, cfg, pool, dev, probe, selector)
}

/// Dispatches on `cfg.strategy.kind`. `difficulties` may be `None` only for full training.
pub fn train(
    learner: &mut dyn Learner,
    train: &Dataset,
    test: &Dataset,
    difficulties: Option<&[f64]>,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    let need = || difficulties.ok_or_else(|| Error::invalid("this strategy needs per-example difficulties"));
    match cfg.strategy.kind {
        StrategyKind::FullySupervised => train_full(learner, train, test, cfg),
        StrategyKind::CbLinear | StrategyKind::CbRoot => train_cb(learner, train, test, need()?, cfg),
        StrategyKind::Ddaclae => train_ddaclae(learner, train, test, need()?, cfg),
    }
}
