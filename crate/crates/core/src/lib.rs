//! Learned example difficulty and model ability for curriculum learning.
//!
//! Example difficulties and model abilities live on a shared logit scale under
//! the one-parameter logistic (Rasch) model. Difficulties are learned from the
//! graded responses of an artificial crowd by variational inference; a model's
//! ability is re-estimated every epoch by maximum likelihood, and training
//! keeps exactly the examples whose difficulty does not exceed that ability.
//!
//! Module map:
//!
//! - [`irt`]: response probability, likelihood, response matrices, grading
//! - [`vi`]: mean-field variational fitting with hierarchical priors
//! - [`ability`]: per-model ability scoring (bounded MLE)
//! - [`curriculum`]: competence schedules and data-selection policies
//! - [`learner`]: trainable classifiers and synthetic tasks
//! - [`crowd`]: artificial-crowd response generation
//! - [`trainer`]: fully supervised, competence-based and ability-driven loops
//! - [`analysis`]: Spearman correlation, run summaries, histograms
//! - [`experiment`]: config-driven end-to-end pipeline used by the CLI

pub mod ability;
pub mod analysis;
pub mod crowd;
pub mod curriculum;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod irt;
pub mod learner;
pub mod seed;
pub mod trainer;
pub mod vi;

pub use error::{Error, Result};
