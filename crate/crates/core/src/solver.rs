//! Bernoulli-Gaussian AMP solver for signals with sparse finite differences.
//!
//! One iteration:
//!
//! 1. pseudo-data `rho = H^T r + mu` and the shared channel variance `theta`;
//! 2. right-toward (R2P) and left-toward (L2P) chain messages, each computed
//!    from the previous iteration's arrays (a Jacobi sweep, not sequential);
//! 3. per-coordinate MMSE denoising against both chain messages;
//! 4. Onsager-corrected residual, optionally damped;
//! 5. optionally, one EM step on the prior `(q, sigma0^2)`.
//!
//! The chain ends are pinned to the pseudo-message `(0, sigma0^2)`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::operators::LinearOperator;
use crate::scalar::{eta_gamma, phi_zeta, SsfMessage, VARIANCE_FLOOR};
use crate::signals::nmse;

pub const Q_MIN: f64 = 1e-8;
pub const Q_MAX: f64 = 1.0 - 1e-8;
pub const THETA_FLOOR: f64 = 1e-12;

/// Bernoulli-Gaussian prior on the finite differences plus the noise variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    /// Probability that a finite difference is nonzero.
    pub q: f64,
    /// Slab variance.
    pub sigma0_sq: f64,
    /// Measurement noise variance.
    pub delta: f64,
}

impl PriorParams {
    pub fn new(q: f64, sigma0_sq: f64, delta: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain(format!("q must lie in (0, 1), got {q}")));
        }
        if !(sigma0_sq > 0.0) || !sigma0_sq.is_finite() {
            return Err(Error::Domain(format!("sigma0^2 must be positive, got {sigma0_sq}")));
        }
        if !(delta >= 0.0) {
            return Err(Error::Domain(format!("delta must be >= 0, got {delta}")));
        }
        Ok(Self { q, sigma0_sq, delta }.clamped())
    }

    pub fn clamped(self) -> Self {
        Self {
            q: self.q.clamp(Q_MIN, Q_MAX),
            sigma0_sq: self.sigma0_sq.max(VARIANCE_FLOOR),
            delta: self.delta,
        }
    }

    /// Starting point for EM tuning: `q = 0.1` and half the sample variance
    /// of the first differences of `H^T y`.
    pub fn em_default(op: &dyn LinearOperator, y: &[f64], delta: f64) -> Result<Self> {
        let rho = op.adjoint(y)?;
        let diffs: Vec<f64> = rho.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / diffs.len() as f64;
        Ok(Self { q: 0.1, sigma0_sq: (var / 2.0).max(VARIANCE_FLOOR), delta })
    }

    fn message(&self, mean: f64, variance: f64) -> SsfMessage {
        SsfMessage::from_prior(mean, variance, self.q, self.sigma0_sq)
    }
}

/// How the effective channel variance is estimated each iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    /// `delta + sum(sigma^2) / M`
    #[default]
    VarianceSum,
    /// `||r||^2 / M`
    ResidualNorm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop once `||mu_t - mu_{t+1}||^2 / ||mu_t||^2 <= tol`.
    pub tol: f64,
    pub damping_beta: f64,
    pub em_enabled: bool,
    pub theta_mode: ThetaMode,
    /// Record per-iteration NMSE when a ground truth is supplied.
    pub record_trace: bool,
    pub record_timing: bool,
    /// Keep the chain-end pseudo-messages at the initial `sigma0^2` instead
    /// of tracking EM updates.
    pub freeze_boundary: bool,
    /// Stop as soon as NMSE against the supplied truth drops to this value.
    pub target_nmse: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            tol: 1e-14,
            damping_beta: 1.0,
            em_enabled: false,
            theta_mode: ThetaMode::VarianceSum,
            record_trace: false,
            record_timing: false,
            freeze_boundary: false,
            target_nmse: None,
        }
    }
}

impl SolverConfig {
    /// Defaults with the damping factor the operator asks for.
    pub fn for_operator(op: &dyn LinearOperator) -> Self {
        Self { damping_beta: op.default_damping(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.damping_beta > 0.0 && self.damping_beta <= 1.0) {
            return Err(Error::Config(format!("damping must lie in (0, 1], got {}", self.damping_beta)));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config(format!("tol must be >= 0, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub mu: Vec<f64>,
    pub sigma_sq: Vec<f64>,
    pub r: Vec<f64>,
    pub rho: Vec<f64>,
    pub theta: f64,
    pub r2p_mean: Vec<f64>,
    pub r2p_var: Vec<f64>,
    pub l2p_mean: Vec<f64>,
    pub l2p_var: Vec<f64>,
    pub iter: usize,
    /// `sigma0^2` at initialization, used when the boundary is frozen.
    pub initial_sigma0_sq: f64,
}

impl SolverState {
    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn m(&self) -> usize {
        self.r.len()
    }

    fn check_finite(&self) -> Result<()> {
        let fields: [(&'static str, &[f64]); 3] =
            [("mu", &self.mu), ("sigma_sq", &self.sigma_sq), ("r", &self.r)];
        for (field, v) in fields {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Diverged { iter: self.iter, field });
            }
        }
        if !self.theta.is_finite() {
            return Err(Error::Diverged { iter: self.iter, field: "theta" });
        }
        Ok(())
    }
}

pub fn init_state(n: usize, m: usize, y: &[f64], params: &PriorParams) -> Result<SolverState> {
    if n < 2 || m < 1 {
        return Err(Error::Domain(format!("need n >= 2 and m >= 1, got n={n}, m={m}")));
    }
    check_len(m, y.len())?;
    let s0 = params.sigma0_sq;
    Ok(SolverState {
        mu: vec![0.0; n],
        sigma_sq: vec![s0; n],
        r: y.to_vec(),
        rho: vec![0.0; n],
        theta: 0.0,
        r2p_mean: vec![0.0; n],
        r2p_var: vec![s0; n],
        l2p_mean: vec![0.0; n],
        l2p_var: vec![s0; n],
        iter: 0,
        initial_sigma0_sq: s0,
    })
}

fn boundary_variance(state: &SolverState, params: &PriorParams, config: &SolverConfig) -> f64 {
    if config.freeze_boundary {
        state.initial_sigma0_sq
    } else {
        params.sigma0_sq
    }
}

/// `rho = H^T r + mu` and the channel variance.
pub fn update_pseudodata(
    state: &SolverState,
    op: &dyn LinearOperator,
    params: &PriorParams,
    mode: ThetaMode,
) -> Result<(Vec<f64>, f64)> {
    let mut rho = op.adjoint(&state.r)?;
    check_len(rho.len(), state.mu.len())?;
    for (p, m) in rho.iter_mut().zip(&state.mu) {
        *p += m;
    }
    let m = state.m() as f64;
    let theta = match mode {
        ThetaMode::VarianceSum => params.delta + state.sigma_sq.iter().sum::<f64>() / m,
        ThetaMode::ResidualNorm => state.r.iter().map(|v| v * v).sum::<f64>() / m,
    };
    Ok((rho, theta.max(THETA_FLOOR)))
}

/// Right-toward messages: entry `i` summarizes everything left of `i`.
/// Reads `state.rho`/`state.theta` of this iteration and the R2P arrays of
/// the previous one; entry 0 is pinned to `(0, boundary)`.
pub fn r2p_update(state: &SolverState, params: &PriorParams, boundary: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = state.n();
    let mut means = vec![0.0; n];
    let mut vars = vec![boundary; n];
    for i in 1..n {
        let (pm, pv) = if i == 1 {
            (0.0, boundary)
        } else {
            (state.r2p_mean[i - 1], state.r2p_var[i - 1])
        };
        let (m, v) = phi_zeta(state.rho[i - 1], state.theta, &params.message(pm, pv))?;
        means[i] = m;
        vars[i] = v;
    }
    Ok((means, vars))
}

/// Mirror of [`r2p_update`]; entry `n-1` is pinned.
pub fn l2p_update(state: &SolverState, params: &PriorParams, boundary: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = state.n();
    let mut means = vec![0.0; n];
    let mut vars = vec![boundary; n];
    for i in 0..n - 1 {
        let (pm, pv) = if i + 1 == n - 1 {
            (0.0, boundary)
        } else {
            (state.l2p_mean[i + 1], state.l2p_var[i + 1])
        };
        let (m, v) = phi_zeta(state.rho[i + 1], state.theta, &params.message(pm, pv))?;
        means[i] = m;
        vars[i] = v;
    }
    Ok((means, vars))
}

/// Posterior means, variances and the average denoiser derivative
/// `mean(sigma^2) / theta`, using the chain messages of this iteration.
pub fn denoise(state: &SolverState, params: &PriorParams) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let n = state.n();
    let mut mu = vec![0.0; n];
    let mut sigma_sq = vec![0.0; n];
    for i in 0..n {
        let right = params.message(state.r2p_mean[i], state.r2p_var[i]);
        let left = params.message(state.l2p_mean[i], state.l2p_var[i]);
        let (m, v) = eta_gamma(state.rho[i], state.theta, &right, &left)?;
        mu[i] = m;
        sigma_sq[i] = v;
    }
    let mean_eta_prime = sigma_sq.iter().sum::<f64>() / (n as f64 * state.theta);
    Ok((mu, sigma_sq, mean_eta_prime))
}

/// `(1-beta) r + beta (y - H mu + r (N/M) <eta'>)`, with `mu` already updated
/// and `r` still the previous residual.
pub fn update_residual(
    state: &SolverState,
    op: &dyn LinearOperator,
    y: &[f64],
    mean_eta_prime: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    check_len(state.m(), y.len())?;
    let h_mu = op.apply(&state.mu)?;
    check_len(state.m(), h_mu.len())?;
    let onsager = state.n() as f64 / state.m() as f64 * mean_eta_prime;
    Ok(y.iter()
        .zip(&h_mu)
        .zip(&state.r)
        .map(|((y, hm), r)| {
            let candidate = y - hm + r * onsager;
            (1.0 - beta) * r + beta * candidate
        })
        .collect())
}

/// E-step posterior `(1 - pi) delta(u) + pi N(u; gamma, nu)` of one finite
/// difference `u` given the pseudo-data difference `s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffPosterior {
    pub pi: f64,
    pub gamma: f64,
    pub nu: f64,
}

/// The pseudo-data difference `s` is modeled as `u + N(0, 2 theta)`.
pub fn em_posterior(s: f64, theta: f64, q: f64, sigma0_sq: f64) -> Result<DiffPosterior> {
    if !(theta > 0.0) || !(sigma0_sq > 0.0) {
        return Err(Error::Domain(format!("em_posterior: need theta, sigma0^2 > 0, got {theta}, {sigma0_sq}")));
    }
    let two_theta = 2.0 * theta;
    // log N(s; 0, 2 theta + sigma0^2) - log N(0; s, 2 theta), with the two
    // quadratic terms combined so large s/theta does not cancel.
    let log_ratio = -0.5 * (sigma0_sq / two_theta).ln_1p() + s * s * sigma0_sq / (2.0 * two_theta * (two_theta + sigma0_sq));
    let logit = (q / (1.0 - q)).ln() + log_ratio;
    Ok(DiffPosterior {
        pi: logistic(logit),
        gamma: s / (two_theta / sigma0_sq + 1.0),
        nu: 1.0 / (1.0 / sigma0_sq + 1.0 / two_theta),
    })
}

/// One EM step on `(q, sigma0^2)` from the finite differences of `rho`.
/// `delta` is carried through unchanged.
pub fn em_update(rho: &[f64], theta: f64, params: &PriorParams) -> Result<PriorParams> {
    if !(theta > 0.0) {
        return Err(Error::Domain(format!("em_update: theta must be positive, got {theta}")));
    }
    if rho.len() < 2 {
        return Err(Error::Domain("em_update: need at least two coordinates".into()));
    }
    let PriorParams { q, sigma0_sq, delta } = params.clamped();
    let mut sum_pi = 0.0;
    let mut sum_second = 0.0;
    for w in rho.windows(2) {
        let DiffPosterior { pi, gamma, nu } = em_posterior(w[1] - w[0], theta, q, sigma0_sq)?;
        sum_pi += pi;
        sum_second += pi * (gamma * gamma + nu);
    }
    let count = (rho.len() - 1) as f64;
    let q_new = (sum_pi / count).clamp(Q_MIN, Q_MAX);
    let sigma0_sq_new = (sum_second / (q_new * count)).max(VARIANCE_FLOOR);
    Ok(PriorParams { q: q_new, sigma0_sq: sigma0_sq_new, delta })
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One full iteration; see the module docs for the order of the updates.
pub fn iterate(
    state: &mut SolverState,
    op: &dyn LinearOperator,
    y: &[f64],
    params: &mut PriorParams,
    config: &SolverConfig,
) -> Result<()> {
    let (rho, theta) = update_pseudodata(state, op, params, config.theta_mode)?;
    state.rho = rho;
    state.theta = theta;

    let boundary = boundary_variance(state, params, config);
    let (r2p_mean, r2p_var) = r2p_update(state, params, boundary)?;
    let (l2p_mean, l2p_var) = l2p_update(state, params, boundary)?;
    state.r2p_mean = r2p_mean;
    state.r2p_var = r2p_var;
    state.l2p_mean = l2p_mean;
    state.l2p_var = l2p_var;

    let (mu, sigma_sq, mean_eta_prime) = denoise(state, params)?;
    state.mu = mu;
    state.sigma_sq = sigma_sq;

    state.r = update_residual(state, op, y, mean_eta_prime, config.damping_beta)?;

    if config.em_enabled {
        *params = em_update(&state.rho, state.theta, params)?;
    }
    state.iter += 1;
    state.check_finite()
}

/// Outcome of a full solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub estimate: Vec<f64>,
    pub iters_run: usize,
    /// The relative-change tolerance was met.
    pub converged: bool,
    /// The supplied target NMSE was met.
    pub reached_target: bool,
    pub nmse_trace: Option<Vec<f64>>,
    pub final_params: PriorParams,
    pub per_iter_seconds: Option<Vec<f64>>,
}

/// Relative change `||prev - next||^2 / ||prev||^2`, or `||next||^2` when
/// `prev` is zero.
pub fn relative_change(prev: &[f64], next: &[f64]) -> f64 {
    let diff: f64 = prev.iter().zip(next).map(|(a, b)| (a - b) * (a - b)).sum();
    let norm: f64 = prev.iter().map(|a| a * a).sum();
    if norm > 0.0 {
        diff / norm
    } else {
        next.iter().map(|b| b * b).sum()
    }
}

/// Tracks the stopping rule, traces and timing shared by the AMP solvers.
pub(crate) struct Monitor<'a> {
    config_tol: f64,
    target: Option<f64>,
    truth: Option<&'a [f64]>,
    pub trace: Option<Vec<f64>>,
    pub seconds: Option<Vec<f64>>,
    started: Option<Instant>,
}

pub(crate) enum Step {
    Continue,
    Converged,
    Target,
}

impl<'a> Monitor<'a> {
    pub fn new(
        tol: f64,
        record_trace: bool,
        record_timing: bool,
        target: Option<f64>,
        truth: Option<&'a [f64]>,
    ) -> Self {
        Self {
            config_tol: tol,
            target,
            truth,
            trace: (record_trace && truth.is_some()).then(Vec::new),
            seconds: record_timing.then(Vec::new),
            started: None,
        }
    }

    pub fn start(&mut self) {
        if self.seconds.is_some() {
            self.started = Some(Instant::now());
        }
    }

    pub fn finish(&mut self, prev: &[f64], next: &[f64]) -> Result<Step> {
        if let (Some(t0), Some(s)) = (self.started.take(), self.seconds.as_mut()) {
            s.push(t0.elapsed().as_secs_f64());
        }
        let mut reached = false;
        if let Some(truth) = self.truth {
            let e = nmse(truth, next)?;
            if let Some(tr) = self.trace.as_mut() {
                tr.push(e);
            }
            reached = self.target.is_some_and(|t| e <= t);
        }
        Ok(if reached {
            Step::Target
        } else if relative_change(prev, next) <= self.config_tol {
            Step::Converged
        } else {
            Step::Continue
        })
    }
}

/// Runs [`iterate`] until the relative change of `mu` falls to `tol`, the
/// optional NMSE target is met, or `max_iters` is reached.
pub fn solve(
    op: &dyn LinearOperator,
    y: &[f64],
    params: &PriorParams,
    config: &SolverConfig,
    truth: Option<&[f64]>,
) -> Result<SolveReport> {
    config.validate()?;
    let n = op.cols();
    if let Some(t) = truth {
        check_len(n, t.len())?;
    }
    let mut params = params.clamped();
    let mut state = init_state(n, op.rows(), y, &params)?;
    let mut monitor = Monitor::new(config.tol, config.record_trace, config.record_timing, config.target_nmse, truth);
    let mut converged = false;
    let mut reached_target = false;
    while state.iter < config.max_iters {
        let prev = state.mu.clone();
        monitor.start();
        iterate(&mut state, op, y, &mut params, config)?;
        match monitor.finish(&prev, &state.mu)? {
            Step::Continue => {}
            Step::Converged => {
                converged = true;
                break;
            }
            Step::Target => {
                reached_target = true;
                break;
            }
        }
    }
    Ok(SolveReport {
        estimate: state.mu,
        iters_run: state.iter,
        converged,
        reached_target,
        nmse_trace: monitor.trace,
        final_params: params,
        per_iter_seconds: monitor.seconds,
    })
}
