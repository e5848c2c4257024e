//! Scalar Gaussian-mixture fusion.
//!
//! Every message in the finite-difference chain is either a plain Gaussian
//! (the pseudo-channel `N(x; rho, theta)`) or a two-component spike-and-slab
//! mixture coming from a neighbouring finite-difference factor. Multiplying
//! one channel with one or two such mixtures gives a 2- or 4-component
//! Gaussian mixture whose first two moments are the denoiser outputs.
//!
//! Weights are carried in the log domain and normalized with log-sum-exp,
//! otherwise the evidence terms underflow as soon as `|rho|` is large and
//! `theta` small.

use crate::error::{Error, Result};

/// Lower bound applied to every variance before fusion.
pub const VARIANCE_FLOOR: f64 = 1e-12;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
fn ln_normal(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -HALF_LN_2PI - 0.5 * variance.ln() - d * d / (2.0 * variance)
}

/// Log-density of `N(mean, variance)` at `x`.
pub fn log_gauss(x: f64, mean: f64, variance: f64) -> Result<f64> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::Domain(format!("log_gauss: variance must be positive, got {variance}")));
    }
    Ok(ln_normal(x, mean, variance))
}

#[inline]
fn floor_variance(v: f64, what: &str) -> Result<f64> {
    if v.is_nan() {
        return Err(Error::Domain(format!("{what}: variance is NaN")));
    }
    Ok(v.max(VARIANCE_FLOOR))
}

/// A scalar Gaussian `(mean, variance)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianParam {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianParam {
    pub fn new(mean: f64, variance: f64) -> Self {
        Self { mean, variance }
    }
}

#[inline]
fn fuse_unchecked(a: GaussianParam, b: GaussianParam) -> (GaussianParam, f64) {
    let variance = 1.0 / (1.0 / a.variance + 1.0 / b.variance);
    let mean = variance * (a.mean / a.variance + b.mean / b.variance);
    let log_evidence = ln_normal(a.mean, b.mean, a.variance + b.variance);
    (GaussianParam { mean, variance }, log_evidence)
}

/// Product of two Gaussian densities.
///
/// Returns the normalized product and the log of its integral,
/// `log N(a.mean; b.mean, a.variance + b.variance)`.
pub fn fuse_pair(a: GaussianParam, b: GaussianParam) -> Result<(GaussianParam, f64)> {
    for v in [a.variance, b.variance] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("fuse_pair: degenerate variance {v}")));
        }
    }
    Ok(fuse_unchecked(a, b))
}

/// Spike-and-slab message sent by a finite-difference factor to a variable:
///
/// `spike_weight * N(x; mean, variance) + (1 - spike_weight) * N(x; mean, variance + slab_extra_variance)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsfMessage {
    pub mean: f64,
    pub variance: f64,
    pub spike_weight: f64,
    pub slab_extra_variance: f64,
}

impl SsfMessage {
    /// Builds the message from the neighbour's `(mean, variance)` and the
    /// prior `(q, sigma0_sq)`; the spike weight is `1 - q`.
    pub fn from_prior(mean: f64, variance: f64, q: f64, sigma0_sq: f64) -> Self {
        Self {
            mean,
            variance,
            spike_weight: 1.0 - q,
            slab_extra_variance: sigma0_sq,
        }
    }

    /// `(log weight, component)` for spike then slab, variances floored.
    fn components(&self) -> Result<[(f64, GaussianParam); 2]> {
        if !(0.0..=1.0).contains(&self.spike_weight) {
            return Err(Error::Domain(format!(
                "spike weight {} outside [0, 1]",
                self.spike_weight
            )));
        }
        let v = floor_variance(self.variance, "message")?;
        let extra = floor_variance(self.slab_extra_variance, "slab")?;
        Ok([
            (self.spike_weight.ln(), GaussianParam::new(self.mean, v)),
            ((1.0 - self.spike_weight).ln(), GaussianParam::new(self.mean, v + extra)),
        ])
    }
}

/// A normalized Gaussian mixture with `K` components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixturePosterior<const K: usize> {
    pub log_weights: [f64; K],
    pub component_means: [f64; K],
    pub component_variances: [f64; K],
    /// Log of the integral of the unnormalized product.
    pub log_evidence: f64,
}

impl<const K: usize> MixturePosterior<K> {
    fn normalized(mut log_weights: [f64; K], means: [f64; K], variances: [f64; K]) -> Self {
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = log_weights.iter().map(|&lw| (lw - max).exp()).sum();
        let ln_sum = sum.ln();
        // Subtract the max before ln(sum): when the raw log-weights are huge
        // this keeps the differences exact.
        for lw in log_weights.iter_mut() {
            *lw = (*lw - max) - ln_sum;
        }
        let log_evidence = max + ln_sum;
        Self {
            log_weights,
            component_means: means,
            component_variances: variances,
            log_evidence,
        }
    }

    pub fn weights(&self) -> [f64; K] {
        self.log_weights.map(f64::exp)
    }

    /// Mixture mean and variance.
    pub fn moments(&self) -> (f64, f64) {
        let w = self.weights();
        let mean: f64 = w.iter().zip(&self.component_means).map(|(w, m)| w * m).sum();
        let variance: f64 = w
            .iter()
            .zip(self.component_means.iter().zip(&self.component_variances))
            .map(|(w, (m, v))| {
                let d = m - mean;
                w * (v + d * d)
            })
            .sum();
        (mean, variance.max(0.0))
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("channel variance theta must be positive, got {theta}")))
    }
}

/// Product of the channel `N(x; rho, theta)` with one spike-and-slab message.
pub fn posterior_single(rho: f64, theta: f64, msg: &SsfMessage) -> Result<MixturePosterior<2>> {
    check_theta(theta)?;
    let channel = GaussianParam::new(rho, theta);
    let mut lw = [0.0; 2];
    let mut means = [0.0; 2];
    let mut vars = [0.0; 2];
    for (k, (log_prior, comp)) in msg.components()?.into_iter().enumerate() {
        let (fused, ev) = fuse_unchecked(channel, comp);
        lw[k] = log_prior + ev;
        means[k] = fused.mean;
        vars[k] = fused.variance;
    }
    Ok(MixturePosterior::normalized(lw, means, vars))
}

/// Product of the channel with both neighbouring messages. Component
/// `2 * a + b` pairs component `a` of `r2p` with component `b` of `l2p`
/// (0 = spike, 1 = slab).
pub fn posterior_double(
    rho: f64,
    theta: f64,
    r2p: &SsfMessage,
    l2p: &SsfMessage,
) -> Result<MixturePosterior<4>> {
    check_theta(theta)?;
    let channel = GaussianParam::new(rho, theta);
    let right = r2p.components()?;
    let left = l2p.components()?;
    let mut lw = [0.0; 4];
    let mut means = [0.0; 4];
    let mut vars = [0.0; 4];
    for (a, (lw_a, comp_a)) in right.iter().enumerate() {
        let (partial, ev_a) = fuse_unchecked(channel, *comp_a);
        for (b, (lw_b, comp_b)) in left.iter().enumerate() {
            let (fused, ev_b) = fuse_unchecked(partial, *comp_b);
            let k = 2 * a + b;
            lw[k] = lw_a + lw_b + ev_a + ev_b;
            means[k] = fused.mean;
            vars[k] = fused.variance;
        }
    }
    Ok(MixturePosterior::normalized(lw, means, vars))
}

pub fn moments<const K: usize>(p: &MixturePosterior<K>) -> (f64, f64) {
    p.moments()
}

/// Denoiser mean and variance at one coordinate given both chain messages.
pub fn eta_gamma(rho: f64, theta: f64, r2p: &SsfMessage, l2p: &SsfMessage) -> Result<(f64, f64)> {
    Ok(posterior_double(rho, theta, r2p, l2p)?.moments())
}

/// Mean and variance of the variable-to-factor message (one chain message
/// plus the channel); this is the R2P/L2P kernel.
pub fn phi_zeta(rho: f64, theta: f64, msg: &SsfMessage) -> Result<(f64, f64)> {
    Ok(posterior_single(rho, theta, msg)?.moments())
}

/// Derivative of the denoiser mean in `rho`.
///
/// For a posterior proportional to `f(x) N(x; rho, theta)`, the derivative of
/// the posterior mean with respect to `rho` is the posterior variance over
/// `theta`.
pub fn eta_prime(rho: f64, theta: f64, r2p: &SsfMessage, l2p: &SsfMessage) -> Result<f64> {
    let (_, variance) = eta_gamma(rho, theta, r2p, l2p)?;
    Ok(variance / theta)
}
