//! Post-hoc statistics: rank correlation between difficulty sources,
//! difficulty histograms, and multi-seed summaries with t-based 95% CIs.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Ranks starting at 1; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end (0-based) share rank mean((start+1)..=end)
        let rank = 0.5 * (start + 1 + end) as f64;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one of the inputs is constant".to_string(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "spearman needs equal lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::invalid("spearman needs at least two observations"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("spearman inputs must be finite"));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mean: f64,
    /// Half-width of the two-sided 95% t interval.
    pub ci95: f64,
    pub n: usize,
}

/// Mean and 95% CI half-width `t(0.975, K-1) * s / sqrt(K)` over `K >= 2` runs.
pub fn summarize_runs(values: &[f64]) -> Result<RunSummary> {
    if values.len() < 2 {
        return Err(Error::invalid(format!(
            "a confidence interval needs at least two runs, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("run values must be finite"));
    }
    let k = values.len() as f64;
    // shifting by the first value keeps identical inputs exact
    let pivot = values[0];
    let mean = pivot + values.iter().map(|v| v - pivot).sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let t = StudentsT::new(0.0, 1.0, k - 1.0)
        .map_err(|e| Error::invalid(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(RunSummary {
        mean,
        ci95: t * var.sqrt() / k.sqrt(),
        n: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `n_bins + 1` edges; a single degenerate bin when all values coincide.
    pub edges: Vec<f64>,
    pub percent: Vec<f64>,
}

impl Histogram {
    pub fn bins(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.edges
            .windows(2)
            .zip(&self.percent)
            .map(|(e, &p)| (e[0], e[1], p))
    }
}

/// Equal-width histogram over `[min, max]`, as percentages of the values.
pub fn difficulty_histogram(values: &[f64], n_bins: usize) -> Result<Histogram> {
    if values.is_empty() || n_bins == 0 {
        return Err(Error::invalid("histogram needs at least one value and one bin"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("histogram values must be finite"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(Histogram {
            edges: vec![lo, hi],
            percent: vec![100.0],
        });
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &v in values {
        let k = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[k] += 1;
    }
    let mut edges: Vec<f64> = (0..n_bins).map(|k| lo + k as f64 * width).collect();
    edges.push(hi);
    let n = values.len() as f64;
    Ok(Histogram {
        edges,
        percent: counts.iter().map(|&c| 100.0 * c as f64 / n).collect(),
    })
}
