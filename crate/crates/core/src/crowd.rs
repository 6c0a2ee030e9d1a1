//! Artificial crowds: ensembles trained on subsampled, label-corrupted
//! training data whose graded predictions form a response matrix.
//!
//! Member `m` trains on a subsample of fraction `subsample_fractions[m % n]`
//! with labels flipped at a rate drawn uniformly from `flip_prob_range`.
//! Each member draws from its own stream derived from `(seed, m)`, so
//! members can train in parallel without changing the result.

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::irt::{grade_responses, ResponseMatrix};
use crate::learner::LearnerSpec;
use crate::seed::{derive_seed, derived_rng, Rng};

/// `n` values log-spaced from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| {
            if k == n - 1 {
                hi
            } else {
                (a + (b - a) * k as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrowdConfig {
    pub ensemble_size: usize,
    /// Assigned round-robin across members.
    pub subsample_fractions: Vec<f64>,
    /// Per-member flip probability is uniform on this interval.
    pub flip_prob_range: [f64; 2],
    /// Set by the caller, never read from a config file.
    #[serde(skip)]
    pub seed: u64,
    pub learner: LearnerSpec,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for CrowdConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 100,
            subsample_fractions: log_spaced(0.01, 1.0, 10),
            flip_prob_range: [0.0, 0.4],
            seed: 0,
            learner: LearnerSpec::Logistic,
            epochs: 20,
            learning_rate: 0.1,
        }
    }
}

impl CrowdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(Error::invalid("a crowd needs at least two members"));
        }
        if self.subsample_fractions.is_empty()
            || self.subsample_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0))
        {
            return Err(Error::invalid(format!(
                "subsample fractions must be non-empty and lie in (0, 1], got {:?}",
                self.subsample_fractions
            )));
        }
        let [lo, hi] = self.flip_prob_range;
        if !(0.0 <= lo && lo <= hi && hi <= 0.5) {
            return Err(Error::invalid(format!(
                "flip_prob_range must satisfy 0 <= lo <= hi <= 0.5, got [{lo}, {hi}]"
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("crowd members need at least one epoch"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("crowd learning rate must be positive"));
        }
        Ok(())
    }
}

/// Replaces each label, with probability `flip_prob`, by a uniformly drawn different class.
pub fn corrupt_labels(labels: &[usize], n_classes: usize, flip_prob: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if !(0.0..=0.5).contains(&flip_prob) {
        return Err(Error::invalid(format!("flip probability must lie in [0, 0.5], got {flip_prob}")));
    }
    if n_classes < 2 && flip_prob > 0.0 {
        return Err(Error::invalid("label flipping needs at least two classes"));
    }
    if let Some(y) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::invalid(format!("label {y} outside 0..{n_classes}")));
    }
    Ok(labels
        .iter()
        .map(|&y| {
            if flip_prob > 0.0 && rng.random::<f64>() < flip_prob {
                (y + rng.random_range(1..n_classes)) % n_classes
            } else {
                y
            }
        })
        .collect())
}

/// Uniform sample without replacement of `max(1, round(fraction * n))` indices, ascending.
pub fn subsample(n: usize, fraction: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::invalid("cannot subsample an empty dataset"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let k = ((fraction * n as f64).round() as usize).clamp(1, n);
    if k == n {
        return Ok((0..n).collect());
    }
    let mut picked = index::sample(rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdMember {
    pub model_id: String,
    pub fraction: f64,
    pub flip_prob: f64,
    pub train_size: usize,
    /// Accuracy against gold over all graded examples.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crowd {
    pub matrix: ResponseMatrix,
    pub members: Vec<CrowdMember>,
    /// Per-member predicted labels, aligned with the matrix rows.
    pub predictions: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

struct MemberOutcome {
    member: CrowdMember,
    predictions: Vec<usize>,
    grades: Vec<u8>,
}

fn train_member(
    m: usize,
    train: &Dataset,
    all_examples: &Dataset,
    cfg: &CrowdConfig,
) -> Result<MemberOutcome> {
    let mut rng = derived_rng(cfg.seed, "crowd-member", m as u64);
    let fraction = cfg.subsample_fractions[m % cfg.subsample_fractions.len()];
    let [lo, hi] = cfg.flip_prob_range;
    let flip_prob = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let picked = subsample(train.len(), fraction, &mut rng)?;
    let part = train.subset(&picked)?;
    let noisy = corrupt_labels(part.labels(), part.n_classes(), flip_prob, &mut rng)?;
    let part = part.relabelled(noisy)?;

    let mut learner = cfg.learner.build(
        train.n_features(),
        train.n_classes(),
        derive_seed(cfg.seed, "crowd-learner", m as u64),
    )?;
    let all: Vec<usize> = (0..part.len()).collect();
    for _ in 0..cfg.epochs {
        learner.train_epoch(&part, &all, cfg.learning_rate)?;
    }
    let predictions = learner.predict_all(all_examples)?;
    let grades = grade_responses(&predictions, all_examples.labels())?;
    let accuracy = grades.iter().map(|&g| f64::from(g)).sum::<f64>() / grades.len() as f64;
    Ok(MemberOutcome {
        member: CrowdMember {
            model_id: format!("member-{m:04}"),
            fraction,
            flip_prob,
            train_size: part.len(),
            accuracy,
        },
        predictions,
        grades,
    })
}

/// Trains the ensemble on `train` and grades every member on `all_examples`.
///
/// `item_ids` name the columns (one per row of `all_examples`). A member
/// whose training fails is dropped with a warning.
pub fn generate_crowd(
    train: &Dataset,
    all_examples: &Dataset,
    item_ids: Vec<String>,
    cfg: &CrowdConfig,
) -> Result<Crowd> {
    cfg.validate()?;
    if train.is_empty() || all_examples.is_empty() {
        return Err(Error::invalid("crowd generation needs non-empty datasets"));
    }
    if item_ids.len() != all_examples.len() {
        return Err(Error::invalid(format!(
            "{} item ids for {} examples",
            item_ids.len(),
            all_examples.len()
        )));
    }
    if train.n_features() != all_examples.n_features() || train.n_classes() != all_examples.n_classes() {
        return Err(Error::invalid("train and graded examples have different shapes"));
    }

    let outcomes: Vec<Result<MemberOutcome>> = (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|m| train_member(m, train, all_examples, cfg))
        .collect();

    let mut members = Vec::new();
    let mut predictions = Vec::new();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (m, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => {
                members.push(o.member);
                predictions.push(o.predictions);
                rows.push(o.grades);
            }
            Err(e) => {
                let w = format!("crowd member {m} skipped: {e}");
                log::warn!("{w}");
                warnings.push(w);
            }
        }
    }
    if rows.len() < 2 {
        return Err(Error::invalid(format!(
            "only {} crowd members trained successfully; at least 2 are required",
            rows.len()
        )));
    }
    let model_ids = members.iter().map(|m| m.model_id.clone()).collect();
    let matrix = ResponseMatrix::from_dense(model_ids, item_ids, &rows)?;
    Ok(Crowd {
        matrix,
        members,
        predictions,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{make_synthetic_task, SynthTaskConfig};
    use crate::seed::rng_from_seed;

    #[test]
    fn default_fractions_are_log_spaced() {
        let f = log_spaced(0.01, 1.0, 10);
        assert_eq!(f.len(), 10);
        assert!((f[0] - 0.01).abs() < 1e-15);
        assert_eq!(f[9], 1.0);
        let ratio = f[1] / f[0];
        assert!(f.windows(2).all(|w| (w[1] / w[0] - ratio).abs() < 1e-9));
    }

    #[test]
    fn corrupt_examples() {
        let labels: Vec<usize> = (0..100).map(|k| k % 3).collect();
        assert_eq!(corrupt_labels(&labels, 3, 0.0, &mut rng_from_seed(1)).unwrap(), labels);

        let binary: Vec<usize> = (0..10_000).map(|k| k % 2).collect();
        let flipped = corrupt_labels(&binary, 2, 0.5, &mut rng_from_seed(2)).unwrap();
        let frac = flipped.iter().zip(&binary).filter(|(a, b)| a != b).count() as f64 / 1e4;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");

        let a = corrupt_labels(&labels, 3, 0.3, &mut rng_from_seed(3)).unwrap();
        let b = corrupt_labels(&labels, 3, 0.3, &mut rng_from_seed(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().zip(&labels).all(|(x, y)| x == y || x < &3));

        assert!(corrupt_labels(&[0, 0], 1, 0.1, &mut rng_from_seed(0)).is_err());
        assert!(corrupt_labels(&[0, 1], 2, 0.6, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn subsample_examples() {
        assert_eq!(subsample(7, 1.0, &mut rng_from_seed(0)).unwrap(), (0..7).collect::<Vec<_>>());
        let s = subsample(100, 0.5, &mut rng_from_seed(1)).unwrap();
        assert_eq!(s.len(), 50);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s, subsample(100, 0.5, &mut rng_from_seed(1)).unwrap());
        assert_eq!(subsample(10, 0.01, &mut rng_from_seed(1)).unwrap().len(), 1);
        assert!(subsample(0, 0.5, &mut rng_from_seed(1)).is_err());
        assert!(subsample(10, 0.0, &mut rng_from_seed(1)).is_err());
    }

    fn blobs(seed: u64) -> crate::learner::SynthTask {
        make_synthetic_task(&SynthTaskConfig {
            n_train: 500,
            n_dev: 50,
            n_test: 200,
            margin_decay: 0.25,
            seed,
            ..SynthTaskConfig::default()
        })
        .unwrap()
    }

    fn item_ids(n: usize) -> Vec<String> {
        (0..n).map(|k| format!("item-{k}")).collect()
    }

    #[test]
    fn clean_full_member_beats_noisy_tiny_member() {
        let task = blobs(1);
        let cfg = CrowdConfig {
            ensemble_size: 2,
            subsample_fractions: vec![1.0, 0.02],
            flip_prob_range: [0.0, 0.0],
            ..CrowdConfig::default()
        };
        // member 1 gets the 0.4 flip rate through a second config sharing its stream
        let clean = generate_crowd(&task.train, &task.test, item_ids(task.test.len()), &cfg).unwrap();
        let noisy_cfg = CrowdConfig { flip_prob_range: [0.4, 0.4], ..cfg };
        let noisy = generate_crowd(&task.train, &task.test, item_ids(task.test.len()), &noisy_cfg).unwrap();
        assert!(clean.members[0].accuracy > noisy.members[1].accuracy);
        assert!(clean.members[0].accuracy > 0.97);
    }

    #[test]
    fn grading_is_recomputable_and_deterministic() {
        let task = blobs(2);
        let cfg = CrowdConfig { ensemble_size: 6, seed: 5, ..CrowdConfig::default() };
        let all = Dataset::concat(&[&task.train, &task.test]).unwrap();
        let crowd = generate_crowd(&task.train, &all, item_ids(all.len()), &cfg).unwrap();
        assert_eq!(crowd.matrix.n_models(), 6);
        assert_eq!(crowd.matrix.n_items(), all.len());
        for (j, preds) in crowd.predictions.iter().enumerate() {
            for (i, &p) in preds.iter().enumerate() {
                assert_eq!(crowd.matrix.get(j, i), Some(p == all.labels()[i]));
            }
        }
        let again = generate_crowd(&task.train, &all, item_ids(all.len()), &cfg).unwrap();
        assert_eq!(crowd, again);
    }

    #[test]
    fn config_validation() {
        let task = blobs(3);
        let ids = item_ids(task.test.len());
        let bad = CrowdConfig { ensemble_size: 1, ..CrowdConfig::default() };
        assert!(generate_crowd(&task.train, &task.test, ids.clone(), &bad).is_err());
        let bad = CrowdConfig { flip_prob_range: [0.0, 0.6], ..CrowdConfig::default() };
        assert!(generate_crowd(&task.train, &task.test, ids.clone(), &bad).is_err());
        let bad = CrowdConfig { subsample_fractions: vec![0.0], ..CrowdConfig::default() };
        assert!(generate_crowd(&task.train, &task.test, ids, &bad).is_err());
        assert!(generate_crowd(&task.train, &task.test, vec![], &CrowdConfig::default()).is_err());
    }
}
