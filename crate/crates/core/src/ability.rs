//! Ability scoring: maximum-likelihood `theta` for one model given known
//! item difficulties and its graded responses.
//!
//! The log-likelihood is strictly concave in `theta`, so its derivative
//! `sum(z_i - sigmoid(theta - b_i))` has at most one root. The root is found by
//! Newton's method safeguarded with a bisection bracket on the configured
//! bounds. Patterns whose maximizer lies outside the bounds (in particular
//! all-correct and all-incorrect patterns, where the MLE diverges) are
//! clamped to the nearest bound and flagged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irt::{response_log_prob, sigmoid};

const TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbilityBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for AbilityBounds {
    fn default() -> Self {
        Self { min: -4.0, max: 4.0 }
    }
}

impl AbilityBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::invalid(format!(
                "ability bounds must be finite with min < max, got [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbilityEstimate {
    pub theta: f64,
    /// The estimate sits on a bound because the maximizer lies outside it.
    pub clamped: bool,
}

fn check_pattern(z: &[u8], bs: &[f64]) -> Result<()> {
    if z.is_empty() {
        return Err(Error::invalid("ability scoring needs at least one response"));
    }
    if z.len() != bs.len() {
        return Err(Error::invalid(format!(
            "{} responses for {} difficulties",
            z.len(),
            bs.len()
        )));
    }
    if let Some(v) = z.iter().find(|&&v| v > 1) {
        return Err(Error::invalid(format!("responses must be 0 or 1, got {v}")));
    }
    if let Some(b) = bs.iter().find(|b| !b.is_finite()) {
        return Err(Error::invalid(format!("non-finite difficulty {b}")));
    }
    Ok(())
}

/// Log-likelihood of a response pattern at `theta`.
pub fn ability_log_likelihood(theta: f64, z: &[u8], bs: &[f64]) -> Result<f64> {
    check_pattern(z, bs)?;
    Ok(z
        .iter()
        .zip(bs)
        .map(|(&zi, &b)| response_log_prob(zi == 1, theta, b))
        .sum())
}

/// Derivative of the log-likelihood with respect to `theta`.
pub fn ability_score_derivative(theta: f64, z: &[u8], bs: &[f64]) -> Result<f64> {
    check_pattern(z, bs)?;
    if !theta.is_finite() {
        return Err(Error::invalid(format!("non-finite theta {theta}")));
    }
    Ok(score(theta, z, bs))
}

#[inline]
fn score(theta: f64, z: &[u8], bs: &[f64]) -> f64 {
    z.iter()
        .zip(bs)
        .map(|(&zi, &b)| f64::from(zi) - sigmoid(theta - b))
        .sum()
}

#[inline]
fn score_and_slope(theta: f64, z: &[u8], bs: &[f64]) -> (f64, f64) {
    z.iter().zip(bs).fold((0.0, 0.0), |(g, h), (&zi, &b)| {
        let p = sigmoid(theta - b);
        (g + f64::from(zi) - p, h - p * (1.0 - p))
    })
}

/// Bounded maximum-likelihood ability estimate.
pub fn estimate_ability(z: &[u8], bs: &[f64], bounds: AbilityBounds) -> Result<AbilityEstimate> {
    check_pattern(z, bs)?;
    bounds.validate()?;

    if score(bounds.max, z, bs) >= 0.0 {
        return Ok(AbilityEstimate {
            theta: bounds.max,
            clamped: true,
        });
    }
    if score(bounds.min, z, bs) <= 0.0 {
        return Ok(AbilityEstimate {
            theta: bounds.min,
            clamped: true,
        });
    }

    // Invariant: score(lo) > 0 > score(hi).
    let (mut lo, mut hi) = (bounds.min, bounds.max);
    let mut theta = 0.5 * (lo + hi);
    for _ in 0..MAX_ITERATIONS {
        let (g, h) = score_and_slope(theta, z, bs);
        if g == 0.0 {
            break;
        }
        if g > 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        let newton = theta - g / h;
        let next = if h < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - theta).abs();
        theta = next;
        if step < TOLERANCE || hi - lo < TOLERANCE {
            break;
        }
    }
    Ok(AbilityEstimate {
        theta,
        clamped: false,
    })
}
