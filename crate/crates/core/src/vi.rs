//! Mean-field variational inference for the 1PL model.
//!
//! Generative model:
//!
//! ```text
//! theta_j | m_theta, u_theta ~ N(m_theta, 1 / u_theta)
//! b_i     | m_b, u_b         ~ N(m_b, 1 / u_b)
//! m_theta, m_b               ~ N(0, 10^6)
//! u_theta, u_b               ~ Gamma(shape 1, rate 1)
//! z_ij                       ~ Bernoulli(sigmoid(theta_j - b_i))
//! ```
//!
//! Every latent gets an independent Gaussian factor: abilities, difficulties
//! and the two hyper-means directly, the two precisions through their
//! logarithm (a log-normal factor). The ELBO is estimated by Monte Carlo with
//! reparameterized draws `x = mean + exp(log_std) * eps`; the entropy term is
//! analytic. Ascent uses Adam on the flattened `(mean, log_std)` vector.
//!
//! Per-cell accumulation runs over fixed blocks of models and is reduced in
//! block order, so results are bit-identical for a given seed regardless of
//! thread count.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::irt::ResponseMatrix;
use crate::seed::{rng_from_seed, Rng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MODEL_BLOCK: usize = 16;

/// Gaussian variational factor over one scalar latent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFactor {
    pub mean: f64,
    pub log_std: f64,
}

impl GaussianFactor {
    pub fn new(mean: f64, log_std: f64) -> Self {
        Self { mean, log_std }
    }

    pub fn std(&self) -> f64 {
        self.log_std.exp()
    }

    /// Differential entropy, `0.5 ln(2 pi e) + log_std`.
    pub fn entropy(&self) -> f64 {
        0.5 * (LN_2PI + 1.0) + self.log_std
    }

    #[inline]
    fn draw(&self, eps: f64) -> f64 {
        self.mean + self.std() * eps
    }
}

/// Variational parameters of `q(Theta, B, m_theta, m_b, log u_theta, log u_b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub ability: Vec<GaussianFactor>,
    pub difficulty: Vec<GaussianFactor>,
    pub ability_hyper_mean: GaussianFactor,
    pub difficulty_hyper_mean: GaussianFactor,
    pub ability_log_precision: GaussianFactor,
    pub difficulty_log_precision: GaussianFactor,
}

impl VariationalParams {
    /// Means drawn from `N(0, 0.1^2)`, unit standard deviations.
    pub fn initialize(n_models: usize, n_items: usize, rng: &mut Rng) -> Self {
        let mut factor = || GaussianFactor::new(0.1 * rng.sample::<f64, _>(StandardNormal), 0.0);
        let ability = (0..n_models).map(|_| factor()).collect();
        let difficulty = (0..n_items).map(|_| factor()).collect();
        Self {
            ability,
            difficulty,
            ability_hyper_mean: factor(),
            difficulty_hyper_mean: factor(),
            ability_log_precision: factor(),
            difficulty_log_precision: factor(),
        }
    }

    fn hypers(&self) -> [&GaussianFactor; 4] {
        [
            &self.ability_hyper_mean,
            &self.difficulty_hyper_mean,
            &self.ability_log_precision,
            &self.difficulty_log_precision,
        ]
    }

    fn n_factors(&self) -> usize {
        self.ability.len() + self.difficulty.len() + 4
    }

    /// `[mean, log_std]` pairs: abilities, difficulties, then the four hyper factors.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.n_factors());
        for f in self.ability.iter().chain(&self.difficulty).chain(self.hypers()) {
            out.push(f.mean);
            out.push(f.log_std);
        }
        out
    }

    fn unflatten(&mut self, flat: &[f64]) {
        let mut it = flat.chunks_exact(2).map(|c| GaussianFactor::new(c[0], c[1]));
        for f in self.ability.iter_mut().chain(self.difficulty.iter_mut()) {
            *f = it.next().expect("flattened length matches");
        }
        self.ability_hyper_mean = it.next().expect("flattened length matches");
        self.difficulty_hyper_mean = it.next().expect("flattened length matches");
        self.ability_log_precision = it.next().expect("flattened length matches");
        self.difficulty_log_precision = it.next().expect("flattened length matches");
    }

    fn validate_for(&self, z: &ResponseMatrix) -> Result<()> {
        if self.ability.len() != z.n_models() || self.difficulty.len() != z.n_items() {
            return Err(Error::invalid(format!(
                "variational parameters cover {} models and {} items, matrix is {}x{}",
                self.ability.len(),
                self.difficulty.len(),
                z.n_models(),
                z.n_items()
            )));
        }
        let all = self.ability.iter().chain(&self.difficulty).chain(self.hypers());
        if all.into_iter().any(|f| !f.mean.is_finite() || !f.log_std.is_finite()) {
            return Err(Error::invalid("variational parameters must be finite"));
        }
        Ok(())
    }
}

/// Hyperprior constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Priors {
    /// Variance of the Gaussian prior on both hyper-means.
    pub hyper_mean_variance: f64,
    pub precision_shape: f64,
    pub precision_rate: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            hyper_mean_variance: 1e6,
            precision_shape: 1.0,
            precision_rate: 1.0,
        }
    }
}

impl Priors {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("hyper_mean_variance", self.hyper_mean_variance),
            ("precision_shape", self.precision_shape),
            ("precision_rate", self.precision_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn log_hyper_mean_prior(&self, m: f64) -> (f64, f64) {
        let v = self.hyper_mean_variance;
        (-0.5 * (LN_2PI + v.ln()) - 0.5 * m * m / v, -m / v)
    }

    /// Gamma prior on a precision, expressed as a density over its log (Jacobian included).
    fn log_precision_prior(&self, log_u: f64) -> (f64, f64) {
        let (a, r) = (self.precision_shape, self.precision_rate);
        let u = log_u.exp();
        (a * r.ln() - ln_gamma(a) + a * log_u - r * u, a - r * u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub learning_rate: f64,
    pub mc_samples: usize,
    /// Set by the caller, never read from a config file.
    #[serde(skip)]
    pub seed: u64,
    /// Relative change of the windowed mean ELBO that counts as converged.
    pub convergence_tol: f64,
    pub convergence_window: usize,
    pub priors: Priors,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            learning_rate: 0.05,
            mc_samples: 4,
            seed: 0,
            convergence_tol: 1e-5,
            convergence_window: 50,
            priors: Priors::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.mc_samples == 0 || self.convergence_window == 0 {
            return Err(Error::invalid(
                "max_iterations, mc_samples and convergence_window must be at least 1",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::invalid(format!(
                "convergence_tol must be positive, got {}",
                self.convergence_tol
            )));
        }
        self.priors.validate()
    }
}

/// ELBO estimate split into its parts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    /// `E_q log p(Z | Theta, B)`
    pub log_likelihood: f64,
    /// `E_q [log p(Theta | m_theta, u_theta) + log p(B | m_b, u_b)]`
    pub local_prior: f64,
    /// `E_q` of the hyperprior log densities (over `m` and `log u`).
    pub hyper_prior: f64,
    /// Entropy of the ability and difficulty factors.
    pub local_entropy: f64,
    /// Entropy of the four hyper factors.
    pub hyper_entropy: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.log_likelihood + self.local_prior + self.hyper_prior + self.local_entropy + self.hyper_entropy
    }
}

/// `(log P(z | x), sigmoid(x))` for a 1PL logit `x`, sharing one `exp`.
#[inline]
fn bernoulli_log_prob_and_mean(x: f64, correct: bool) -> (f64, f64) {
    let e = (-x.abs()).exp();
    let inv = 1.0 / (1.0 + e);
    let p = if x >= 0.0 { inv } else { e * inv };
    let signed = if correct { x } else { -x };
    (signed.min(0.0) - e.ln_1p(), p)
}

/// Observed cells grouped by model.
struct Cells {
    offsets: Vec<usize>,
    items: Vec<usize>,
    correct: Vec<f64>,
    n_items: usize,
}

impl Cells {
    fn new(z: &ResponseMatrix) -> Self {
        let mut offsets = Vec::with_capacity(z.n_models() + 1);
        let mut items = Vec::with_capacity(z.n_observed());
        let mut correct = Vec::with_capacity(z.n_observed());
        offsets.push(0);
        for j in 0..z.n_models() {
            for (i, cell) in z.row(j).iter().enumerate() {
                if let Some(v) = cell {
                    items.push(i);
                    correct.push(f64::from(u8::from(*v)));
                }
            }
            offsets.push(items.len());
        }
        Self {
            offsets,
            items,
            correct,
            n_items: z.n_items(),
        }
    }

    fn n_models(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Log-likelihood and its gradients at one draw, accumulated block by block.
    fn likelihood_and_gradient(&self, thetas: &[f64], bs: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let blocks: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..self.n_models())
            .collect::<Vec<_>>()
            .par_chunks(MODEL_BLOCK)
            .map(|block| {
                let mut ll = 0.0;
                let mut g_theta = Vec::with_capacity(block.len());
                let mut g_b = vec![0.0; self.n_items];
                for &j in block {
                    let theta = thetas[j];
                    let mut g = 0.0;
                    for k in self.offsets[j]..self.offsets[j + 1] {
                        let i = self.items[k];
                        let zij = self.correct[k];
                        let (log_p, p) = bernoulli_log_prob_and_mean(theta - bs[i], zij > 0.5);
                        ll += log_p;
                        let resid = zij - p;
                        g += resid;
                        g_b[i] -= resid;
                    }
                    g_theta.push(g);
                }
                (ll, g_theta, g_b)
            })
            .collect();
        let mut ll = 0.0;
        let mut g_theta = Vec::with_capacity(thetas.len());
        let mut g_b = vec![0.0; self.n_items];
        for (block_ll, block_theta, block_b) in blocks {
            ll += block_ll;
            g_theta.extend(block_theta);
            for (acc, v) in g_b.iter_mut().zip(block_b) {
                *acc += v;
            }
        }
        (ll, g_theta, g_b)
    }
}

/// Hierarchical-normal log density of `values` around `m` with precision `exp(log_u)`,
/// with gradients with respect to each value, `m` and `log_u`.
fn hierarchical_normal(values: &[f64], m: f64, log_u: f64) -> (f64, Vec<f64>, f64, f64) {
    let u = log_u.exp();
    let n = values.len() as f64;
    let mut sq = 0.0;
    let mut sum = 0.0;
    let grads = values
        .iter()
        .map(|&v| {
            let d = v - m;
            sq += d * d;
            sum += d;
            -u * d
        })
        .collect();
    let logp = 0.5 * n * (log_u - LN_2PI) - 0.5 * u * sq;
    (logp, grads, u * sum, 0.5 * n - 0.5 * u * sq)
}

/// One Monte-Carlo estimate plus the reparameterized gradient of the ELBO.
fn estimate(
    cells: &Cells,
    vp: &VariationalParams,
    priors: &Priors,
    mc_samples: usize,
    rng: &mut Rng,
    mut grad: Option<&mut [f64]>,
) -> ElboTerms {
    let n_models = vp.ability.len();
    let n_items = vp.difficulty.len();
    let mut terms = ElboTerms::default();
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let weight = 1.0 / mc_samples as f64;

    let mut eps_theta = vec![0.0; n_models];
    let mut eps_b = vec![0.0; n_items];
    for _ in 0..mc_samples {
        eps_theta.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
        eps_b.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
        let eps_hyper: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));

        let thetas: Vec<f64> = vp.ability.iter().zip(&eps_theta).map(|(f, &e)| f.draw(e)).collect();
        let bs: Vec<f64> = vp.difficulty.iter().zip(&eps_b).map(|(f, &e)| f.draw(e)).collect();
        let hyper: Vec<f64> = vp.hypers().iter().zip(&eps_hyper).map(|(f, &e)| f.draw(e)).collect();
        let (m_theta, m_b, lu_theta, lu_b) = (hyper[0], hyper[1], hyper[2], hyper[3]);

        let (ll, g_lik_theta, g_lik_b) = cells.likelihood_and_gradient(&thetas, &bs);
        let (lp_theta, g_pr_theta, g_m_theta, g_lu_theta) = hierarchical_normal(&thetas, m_theta, lu_theta);
        let (lp_b, g_pr_b, g_m_b, g_lu_b) = hierarchical_normal(&bs, m_b, lu_b);
        let (hp_m_theta, gh_m_theta) = priors.log_hyper_mean_prior(m_theta);
        let (hp_m_b, gh_m_b) = priors.log_hyper_mean_prior(m_b);
        let (hp_lu_theta, gh_lu_theta) = priors.log_precision_prior(lu_theta);
        let (hp_lu_b, gh_lu_b) = priors.log_precision_prior(lu_b);

        terms.log_likelihood += weight * ll;
        terms.local_prior += weight * (lp_theta + lp_b);
        terms.hyper_prior += weight * (hp_m_theta + hp_m_b + hp_lu_theta + hp_lu_b);

        if let Some(g) = grad.as_deref_mut() {
            let mut push = |slot: usize, factor: &GaussianFactor, eps: f64, dx: f64| {
                g[2 * slot] += weight * dx;
                g[2 * slot + 1] += weight * dx * factor.std() * eps;
            };
            for j in 0..n_models {
                push(j, &vp.ability[j], eps_theta[j], g_lik_theta[j] + g_pr_theta[j]);
            }
            for i in 0..n_items {
                push(n_models + i, &vp.difficulty[i], eps_b[i], g_lik_b[i] + g_pr_b[i]);
            }
            let base = n_models + n_items;
            let hyper_grads = [
                g_m_theta + gh_m_theta,
                g_m_b + gh_m_b,
                g_lu_theta + gh_lu_theta,
                g_lu_b + gh_lu_b,
            ];
            for (k, (f, dx)) in vp.hypers().iter().zip(hyper_grads).enumerate() {
                push(base + k, f, eps_hyper[k], dx);
            }
        }
    }

    terms.local_entropy = vp.ability.iter().chain(&vp.difficulty).map(GaussianFactor::entropy).sum();
    terms.hyper_entropy = vp.hypers().iter().map(|f| f.entropy()).sum();
    if let Some(g) = grad {
        // d(entropy)/d(log_std) = 1 for every factor
        g.iter_mut().skip(1).step_by(2).for_each(|v| *v += 1.0);
    }
    terms
}

/// Monte-Carlo ELBO estimate, split into its terms.
pub fn elbo_terms(
    z: &ResponseMatrix,
    vp: &VariationalParams,
    priors: &Priors,
    mc_samples: usize,
    rng: &mut Rng,
) -> Result<ElboTerms> {
    vp.validate_for(z)?;
    priors.validate()?;
    if mc_samples == 0 {
        return Err(Error::invalid("mc_samples must be at least 1"));
    }
    Ok(estimate(&Cells::new(z), vp, priors, mc_samples, rng, None))
}

/// Monte-Carlo ELBO estimate under the default priors; deterministic given `rng`.
pub fn elbo(z: &ResponseMatrix, vp: &VariationalParams, mc_samples: usize, rng: &mut Rng) -> Result<f64> {
    Ok(elbo_terms(z, vp, &Priors::default(), mc_samples, rng)?.total())
}

/// Posterior summary of one hyper factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperSummary {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPosterior {
    pub ability_mean: HyperSummary,
    pub difficulty_mean: HyperSummary,
    /// Log-normal moments of the ability precision.
    pub ability_precision: HyperSummary,
    pub difficulty_precision: HyperSummary,
}

fn log_normal_moments(f: &GaussianFactor) -> HyperSummary {
    let s2 = f.std().powi(2);
    let mean = (f.mean + 0.5 * s2).exp();
    HyperSummary {
        mean,
        std: mean * s2.exp_m1().sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrtPosterior {
    pub model_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub ability_mean: Vec<f64>,
    pub ability_std: Vec<f64>,
    pub difficulty_mean: Vec<f64>,
    pub difficulty_std: Vec<f64>,
    pub hyper: HyperPosterior,
    /// Mean ELBO estimate over the final convergence window.
    pub elbo: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
    /// Per-iteration ELBO estimates.
    #[serde(skip)]
    pub elbo_trace: Vec<f64>,
}

impl IrtPosterior {
    fn from_params(z: &ResponseMatrix, vp: &VariationalParams) -> Self {
        Self {
            model_ids: z.model_ids().to_vec(),
            item_ids: z.item_ids().to_vec(),
            ability_mean: vp.ability.iter().map(|f| f.mean).collect(),
            ability_std: vp.ability.iter().map(GaussianFactor::std).collect(),
            difficulty_mean: vp.difficulty.iter().map(|f| f.mean).collect(),
            difficulty_std: vp.difficulty.iter().map(GaussianFactor::std).collect(),
            hyper: HyperPosterior {
                ability_mean: HyperSummary {
                    mean: vp.ability_hyper_mean.mean,
                    std: vp.ability_hyper_mean.std(),
                },
                difficulty_mean: HyperSummary {
                    mean: vp.difficulty_hyper_mean.mean,
                    std: vp.difficulty_hyper_mean.std(),
                },
                ability_precision: log_normal_moments(&vp.ability_log_precision),
                difficulty_precision: log_normal_moments(&vp.difficulty_log_precision),
            },
            elbo: f64::NAN,
            iterations: 0,
            converged: false,
            warnings: Vec::new(),
            elbo_trace: Vec::new(),
        }
    }
}

/// `(abilities, difficulties)` posterior means, in matrix order.
pub fn posterior_point_estimates(p: &IrtPosterior) -> (Vec<f64>, Vec<f64>) {
    (p.ability_mean.clone(), p.difficulty_mean.clone())
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Ascent step: `params += lr * m_hat / (sqrt(v_hat) + eps)`.
    fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p += self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Fits the hierarchical 1PL model by stochastic ELBO ascent.
///
/// Stops when the mean ELBO of consecutive `convergence_window`-iteration
/// windows changes by less than `convergence_tol` (relative), or after
/// `max_iterations`. The reported factors are the average of the iterates
/// over the last two complete windows and any partial one after them, which
/// removes most of the optimizer's jitter.
pub fn fit_1pl(z: &ResponseMatrix, cfg: &FitConfig) -> Result<IrtPosterior> {
    cfg.validate()?;
    if z.n_observed() == 0 {
        return Err(Error::invalid("response matrix has no observed cells"));
    }
    if z.n_models() < 2 || z.n_items() < 2 {
        return Err(Error::invalid(format!(
            "fitting needs at least 2 models and 2 items, got {}x{}",
            z.n_models(),
            z.n_items()
        )));
    }

    let warnings: Vec<String> = z
        .degenerate_items()
        .into_iter()
        .map(|i| {
            format!(
                "item `{}` received identical responses from every model; its difficulty is weakly identified",
                z.item_ids()[i]
            )
        })
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }

    let cells = Cells::new(z);
    let mut rng = rng_from_seed(cfg.seed);
    let mut vp = VariationalParams::initialize(z.n_models(), z.n_items(), &mut rng);
    let mut flat = vp.flatten();
    let mut grad = vec![0.0; flat.len()];
    let mut adam = Adam::new(flat.len(), cfg.learning_rate);

    let window = cfg.convergence_window;
    let mut trace = Vec::with_capacity(cfg.max_iterations);
    let mut previous_window: Option<f64> = None;
    let mut converged = false;
    // iterate sums over the current window and the last two complete ones
    let mut current_sum = vec![0.0; flat.len()];
    let mut complete_sums: Vec<Vec<f64>> = Vec::new();
    for iteration in 1..=cfg.max_iterations {
        let terms = estimate(&cells, &vp, &cfg.priors, cfg.mc_samples, &mut rng, Some(&mut grad));
        let value = terms.total();
        if !value.is_finite() {
            return Err(Error::invalid(format!(
                "ELBO became non-finite at iteration {iteration}; try a smaller learning rate"
            )));
        }
        trace.push(value);
        adam.ascend(&mut flat, &grad);
        vp.unflatten(&flat);
        current_sum.iter_mut().zip(&flat).for_each(|(s, p)| *s += p);

        if iteration % window == 0 {
            complete_sums.push(std::mem::replace(&mut current_sum, vec![0.0; flat.len()]));
            if complete_sums.len() > 2 {
                complete_sums.remove(0);
            }
            let current = trace[iteration - window..].iter().sum::<f64>() / window as f64;
            if let Some(prev) = previous_window {
                if ((current - prev) / prev).abs() < cfg.convergence_tol {
                    converged = true;
                    break;
                }
            }
            previous_window = Some(current);
        }
    }

    let averaged_over = trace.len() % window + complete_sums.len() * window;
    for prev in &complete_sums {
        current_sum.iter_mut().zip(prev).for_each(|(s, p)| *s += p);
    }
    let averaged: Vec<f64> = current_sum.iter().map(|s| s / averaged_over as f64).collect();
    vp.unflatten(&averaged);

    let mut posterior = IrtPosterior::from_params(z, &vp);
    let tail = window.min(trace.len());
    posterior.elbo = trace[trace.len() - tail..].iter().sum::<f64>() / tail as f64;
    posterior.iterations = trace.len();
    posterior.converged = converged;
    posterior.warnings = warnings;
    posterior.elbo_trace = trace;
    Ok(posterior)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::irt::{log_sigmoid, response_log_likelihood, sigmoid};

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|k| format!("{prefix}{k}")).collect()
    }

    fn small_matrix() -> ResponseMatrix {
        ResponseMatrix::from_dense(ids("m", 2), ids("i", 2), &[vec![1, 0], vec![1, 1]]).unwrap()
    }

    #[test]
    fn fused_bernoulli_terms_match_reference() {
        for k in -400..=400 {
            let x = k as f64 * 0.1;
            let (lp1, p) = bernoulli_log_prob_and_mean(x, true);
            let (lp0, _) = bernoulli_log_prob_and_mean(x, false);
            assert!((p - sigmoid(x)).abs() <= 1e-15);
            assert!((lp1 - log_sigmoid(x)).abs() <= 1e-12 * log_sigmoid(x).abs().max(1.0));
            assert!((lp0 - log_sigmoid(-x)).abs() <= 1e-12 * log_sigmoid(-x).abs().max(1.0));
        }
    }

    #[test]
    fn elbo_is_deterministic_under_seed() {
        let z = small_matrix();
        let vp = VariationalParams::initialize(2, 2, &mut rng_from_seed(1));
        let a = elbo(&z, &vp, 1, &mut rng_from_seed(7)).unwrap();
        let b = elbo(&z, &vp, 1, &mut rng_from_seed(7)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let c = elbo(&z, &vp, 1, &mut rng_from_seed(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn elbo_rejects_mismatched_params() {
        let z = small_matrix();
        let vp = VariationalParams::initialize(3, 2, &mut rng_from_seed(1));
        assert!(elbo(&z, &vp, 1, &mut rng_from_seed(7)).is_err());
    }

    #[test]
    fn likelihood_term_matches_irt_module_at_zero_width() {
        let z = small_matrix();
        let mut vp = VariationalParams::initialize(2, 2, &mut rng_from_seed(3));
        for f in vp.ability.iter_mut().chain(vp.difficulty.iter_mut()) {
            f.log_std = -40.0;
        }
        let terms = elbo_terms(&z, &vp, &Priors::default(), 3, &mut rng_from_seed(2)).unwrap();
        let thetas: Vec<f64> = vp.ability.iter().map(|f| f.mean).collect();
        let bs: Vec<f64> = vp.difficulty.iter().map(|f| f.mean).collect();
        let exact = response_log_likelihood(&z, &thetas, &bs).unwrap();
        assert!((terms.log_likelihood - exact).abs() < 1e-9);
    }

    /// Central-difference check of the reparameterized gradient with common random numbers.
    #[test]
    fn gradient_matches_finite_differences_of_the_estimator() {
        let z = ResponseMatrix::from_dense(
            ids("m", 3),
            ids("i", 4),
            &[vec![1, 0, 1, 1], vec![0, 0, 1, 0], vec![1, 1, 1, 0]],
        )
        .unwrap();
        let cells = Cells::new(&z);
        let priors = Priors { hyper_mean_variance: 4.0, ..Priors::default() };
        let vp = VariationalParams::initialize(3, 4, &mut rng_from_seed(9));
        let mut grad = vec![0.0; 2 * vp.n_factors()];
        estimate(&cells, &vp, &priors, 2, &mut rng_from_seed(5), Some(&mut grad));
        let base = vp.flatten();
        let h = 1e-6;
        for k in 0..base.len() {
            let eval = |delta: f64| {
                let mut p = base.clone();
                p[k] += delta;
                let mut v = vp.clone();
                v.unflatten(&p);
                estimate(&cells, &v, &priors, 2, &mut rng_from_seed(5), None).total()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-5 * fd.abs().max(1.0), "k={k} fd={fd} g={}", grad[k]);
        }
    }

    #[test]
    fn fit_rejects_tiny_or_empty_input() {
        let one = ResponseMatrix::from_dense(ids("m", 1), ids("i", 2), &[vec![1, 0]]).unwrap();
        assert!(fit_1pl(&one, &FitConfig::default()).is_err());
        let bad = FitConfig { learning_rate: 0.0, ..FitConfig::default() };
        assert!(fit_1pl(&small_matrix(), &bad).is_err());
    }

    #[test]
    fn degenerate_items_warn_but_stay() {
        let z = ResponseMatrix::from_dense(
            ids("m", 3),
            ids("i", 3),
            &[vec![1, 1, 0], vec![1, 0, 0], vec![1, 1, 1]],
        )
        .unwrap();
        let cfg = FitConfig { max_iterations: 200, ..FitConfig::default() };
        let post = fit_1pl(&z, &cfg).unwrap();
        assert_eq!(post.difficulty_mean.len(), 3);
        assert_eq!(post.warnings.len(), 1);
        assert!(post.warnings[0].contains("i0"));
        assert!(post.difficulty_std.iter().chain(&post.ability_std).all(|s| *s > 0.0));
    }

    #[test]
    fn point_estimates_follow_matrix_order() {
        let z = small_matrix();
        let cfg = FitConfig { max_iterations: 100, ..FitConfig::default() };
        let post = fit_1pl(&z, &cfg).unwrap();
        let (thetas, bs) = posterior_point_estimates(&post);
        assert_eq!(thetas, post.ability_mean);
        assert_eq!(bs, post.difficulty_mean);
        assert_eq!(post.item_ids, z.item_ids());
        assert_eq!(post.model_ids, z.model_ids());
    }

    #[test]
    fn fit_is_deterministic() {
        let z = ResponseMatrix::from_dense(
            ids("m", 4),
            ids("i", 3),
            &[vec![1, 1, 0], vec![1, 0, 0], vec![1, 1, 1], vec![0, 1, 0]],
        )
        .unwrap();
        let cfg = FitConfig { max_iterations: 300, seed: 4, ..FitConfig::default() };
        assert_eq!(fit_1pl(&z, &cfg).unwrap(), fit_1pl(&z, &cfg).unwrap());
    }
}
