//! Data-selection policies.
//!
//! Competence-based schedules map a training step to the fraction of the
//! easiest examples that may be used; ability-based selection keeps every
//! example whose difficulty does not exceed the current ability estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_C0: f64 = 0.01;
pub const DEFAULT_PROBE_SIZE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "full")]
    FullySupervised,
    #[serde(rename = "cb-linear")]
    CbLinear,
    #[serde(rename = "cb-root")]
    CbRoot,
    #[serde(rename = "ddaclae")]
    Ddaclae,
}

impl StrategyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyKind::FullySupervised => "full",
            StrategyKind::CbLinear => "cb-linear",
            StrategyKind::CbRoot => "cb-root",
            StrategyKind::Ddaclae => "ddaclae",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(StrategyKind::FullySupervised),
            "cb-linear" => Ok(StrategyKind::CbLinear),
            "cb-root" => Ok(StrategyKind::CbRoot),
            "ddaclae" => Ok(StrategyKind::Ddaclae),
            other => Err(Error::invalid(format!(
                "unknown strategy `{other}` (expected full, cb-linear, cb-root or ddaclae)"
            ))),
        }
    }
}

/// Where per-example difficulties come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DifficultySource {
    /// Posterior difficulty means from the fitted 1PL model.
    Learned,
    /// Token count of the first sentence.
    Length,
    /// Seeded uniform noise; a control for heuristic orderings on tasks without text.
    Random,
}

impl DifficultySource {
    pub fn as_str(&self) -> &'static str {
        match self {
            DifficultySource::Learned => "learned",
            DifficultySource::Length => "length",
            DifficultySource::Random => "random",
        }
    }
}

impl std::str::FromStr for DifficultySource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(DifficultySource::Learned),
            "length" => Ok(DifficultySource::Length),
            "random" => Ok(DifficultySource::Random),
            other => Err(Error::invalid(format!(
                "unknown difficulty source `{other}` (expected learned, length or random)"
            ))),
        }
    }
}

fn default_source() -> DifficultySource {
    DifficultySource::Learned
}

fn default_c0() -> f64 {
    DEFAULT_C0
}

fn default_probe_size() -> usize {
    DEFAULT_PROBE_SIZE
}

/// A selection policy and its constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumStrategy {
    #[serde(rename = "strategy")]
    pub kind: StrategyKind,
    #[serde(default = "default_source")]
    pub difficulty_source: DifficultySource,
    #[serde(default = "default_c0")]
    pub c0: f64,
    /// Step at which competence reaches 1; `None` means `num_epochs / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_competence_step: Option<usize>,
    #[serde(default = "default_probe_size")]
    pub probe_size: usize,
}

impl CurriculumStrategy {
    pub fn new(kind: StrategyKind, difficulty_source: DifficultySource) -> Self {
        Self {
            kind,
            difficulty_source,
            c0: DEFAULT_C0,
            full_competence_step: None,
            probe_size: DEFAULT_PROBE_SIZE,
        }
    }

    pub fn full() -> Self {
        Self::new(StrategyKind::FullySupervised, DifficultySource::Learned)
    }

    /// Short name such as `cb-root(learned)`.
    pub fn label(&self) -> String {
        match self.kind {
            StrategyKind::FullySupervised => "full".to_string(),
            StrategyKind::Ddaclae => "ddaclae".to_string(),
            kind => format!("{}({})", kind.as_str(), self.difficulty_source.as_str()),
        }
    }

    /// Resolved full-competence step for a run of `num_epochs` epochs.
    pub fn competence_step(&self, num_epochs: usize) -> usize {
        self.full_competence_step.unwrap_or((num_epochs / 2).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0 && self.c0 <= 1.0) {
            return Err(Error::invalid(format!("c0 must lie in (0, 1], got {}", self.c0)));
        }
        if self.full_competence_step == Some(0) {
            return Err(Error::invalid("full-competence step must be at least 1"));
        }
        if self.probe_size == 0 {
            return Err(Error::invalid("probe_size must be at least 1"));
        }
        if self.kind == StrategyKind::Ddaclae && self.difficulty_source != DifficultySource::Learned {
            return Err(Error::invalid(
                "ability-based selection compares abilities to learned difficulties; \
                 difficulty_source must be `learned`",
            ));
        }
        Ok(())
    }
}

fn check_schedule(full_step: usize, c0: f64) -> Result<()> {
    if full_step == 0 {
        return Err(Error::invalid("full-competence step T must be at least 1"));
    }
    if !(c0 > 0.0 && c0 <= 1.0) {
        return Err(Error::invalid(format!("c0 must lie in (0, 1], got {c0}")));
    }
    Ok(())
}

/// `min(1, t (1 - c0) / T + c0)`
pub fn cb_linear(t: usize, full_step: usize, c0: f64) -> Result<f64> {
    check_schedule(full_step, c0)?;
    if t >= full_step {
        return Ok(1.0);
    }
    Ok((t as f64 * (1.0 - c0) / full_step as f64 + c0).min(1.0))
}

/// `min(1, sqrt(t (1 - c0^2) / T + c0^2))`
pub fn cb_root(t: usize, full_step: usize, c0: f64) -> Result<f64> {
    check_schedule(full_step, c0)?;
    if t >= full_step {
        return Ok(1.0);
    }
    let c0_sq = c0 * c0;
    Ok((t as f64 * (1.0 - c0_sq) / full_step as f64 + c0_sq).sqrt().min(1.0))
}

/// Indices of the `max(1, round(c * N))` easiest examples, ascending by index.
///
/// Equal difficulties are ranked by ascending index.
pub fn select_by_proportion(difficulties: &[f64], c: f64) -> Result<Vec<usize>> {
    if difficulties.is_empty() {
        return Err(Error::invalid("cannot select from an empty set"));
    }
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::invalid(format!("proportion must lie in (0, 1], got {c}")));
    }
    let n = difficulties.len();
    let k = ((c * n as f64).round() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| difficulties[a].total_cmp(&difficulties[b]).then(a.cmp(&b)));
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Indices whose difficulty is at most `theta_hat`, ascending. May be empty.
pub fn select_by_ability(difficulties: &[f64], theta_hat: f64) -> Vec<usize> {
    difficulties
        .iter()
        .enumerate()
        .filter(|(_, &b)| b <= theta_hat)
        .map(|(k, _)| k)
        .collect()
}

/// A text example: one sentence or a sentence pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextExample {
    pub first: String,
    pub second: Option<String>,
}

impl TextExample {
    pub fn single(text: impl Into<String>) -> Self {
        Self {
            first: text.into(),
            second: None,
        }
    }

    pub fn pair(first: impl Into<String>, second: impl Into<String>) -> Self {
        Self {
            first: first.into(),
            second: Some(second.into()),
        }
    }
}

/// Whitespace token count of the first sentence of each example.
///
/// An empty first sentence scores 0 and logs a warning.
pub fn heuristic_difficulty_length(examples: &[TextExample]) -> Vec<f64> {
    examples
        .iter()
        .enumerate()
        .map(|(k, ex)| {
            let n = ex.first.split_whitespace().count();
            if n == 0 {
                log::warn!("example {k} has an empty first sentence; length difficulty set to 0");
            }
            n as f64
        })
        .collect()
}
