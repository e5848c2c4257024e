//! Piecewise-constant test signals and noisy measurements.

use std::io::Write;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::operators::LinearOperator;
use crate::rng::{rng_from, stream, Rng};

/// Distribution of the finite differences of the signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalModel {
    /// `(1-q) delta(u) + q N(u; 0, sigma0^2)`
    GaussianPwc,
    /// `(1-q) delta(u) + q U{-sigma0, +sigma0}`
    BernoulliPwc,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignalSpec {
    pub n: usize,
    pub model: SignalModel,
    pub q: f64,
    pub sigma0: f64,
    pub seed: u64,
    /// Place exactly this many jumps at uniformly drawn locations instead
    /// of drawing each jump independently with probability `q`.
    pub force_k: Option<usize>,
}

impl SignalSpec {
    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Domain(format!("signal length must be >= 2, got {}", self.n)));
        }
        if !(self.sigma0 > 0.0) {
            return Err(Error::Domain(format!("sigma0 must be positive, got {}", self.sigma0)));
        }
        match self.force_k {
            Some(k) if k > self.n - 1 => Err(Error::Domain(format!(
                "cannot place {k} jumps in a length-{} signal",
                self.n
            ))),
            Some(_) => Ok(()),
            None if !(self.q > 0.0 && self.q < 1.0) => {
                Err(Error::Domain(format!("q must lie in (0, 1), got {}", self.q)))
            }
            None => Ok(()),
        }
    }
}

fn draw_jump(rng: &mut Rng, model: SignalModel, sigma0: f64) -> f64 {
    match model {
        SignalModel::GaussianPwc => loop {
            let u = sigma0 * rng.sample::<f64, _>(StandardNormal);
            if u != 0.0 {
                break u;
            }
        },
        SignalModel::BernoulliPwc => {
            if rng.random::<bool>() {
                sigma0
            } else {
                -sigma0
            }
        }
    }
}

/// Draws a signal with `x[0] = 0` and returns it with its jump count.
pub fn generate(spec: &SignalSpec) -> Result<(Vec<f64>, usize)> {
    spec.validate()?;
    let mut rng = rng_from(spec.seed, stream::SIGNAL);
    let mut jumps = vec![0.0; spec.n - 1];
    match spec.force_k {
        Some(k) => {
            let mut at = index::sample(&mut rng, spec.n - 1, k).into_vec();
            at.sort_unstable();
            for d in at {
                jumps[d] = draw_jump(&mut rng, spec.model, spec.sigma0);
            }
        }
        None => {
            for u in jumps.iter_mut() {
                if rng.random::<f64>() < spec.q {
                    *u = draw_jump(&mut rng, spec.model, spec.sigma0);
                }
            }
        }
    }
    let k = jumps.iter().filter(|u| **u != 0.0).count();
    let mut x = Vec::with_capacity(spec.n);
    x.push(0.0);
    let mut level = 0.0;
    for u in &jumps {
        level += u;
        x.push(level);
    }
    Ok((x, k))
}

/// `y = H x + w` with `w ~ N(0, delta I)`.
pub fn measure(op: &dyn LinearOperator, x: &[f64], delta: f64, seed: u64) -> Result<Vec<f64>> {
    if !(delta >= 0.0) {
        return Err(Error::Domain(format!("noise variance must be >= 0, got {delta}")));
    }
    let mut y = op.apply(x)?;
    if delta > 0.0 {
        let sd = delta.sqrt();
        let mut rng = rng_from(seed, stream::NOISE);
        for v in y.iter_mut() {
            *v += sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(y)
}

/// `||x0 - xhat||^2 / ||x0||^2`, or `||xhat||^2` when the truth is zero.
pub fn nmse(x0: &[f64], xhat: &[f64]) -> Result<f64> {
    check_len(x0.len(), xhat.len())?;
    let err: f64 = x0.iter().zip(xhat).map(|(a, b)| (a - b) * (a - b)).sum();
    let norm: f64 = x0.iter().map(|a| a * a).sum();
    Ok(if norm > 0.0 {
        err / norm
    } else {
        xhat.iter().map(|b| b * b).sum()
    })
}

pub fn nmse_db(x0: &[f64], xhat: &[f64]) -> Result<f64> {
    Ok(to_db(nmse(x0, xhat)?))
}

/// `10 log10(v)`, floored at -300 dB.
pub fn to_db(v: f64) -> f64 {
    10.0 * v.max(1e-30).log10()
}

/// One value per line.
pub fn write_signal<W: Write>(x: &[f64], mut out: W) -> Result<()> {
    for v in x {
        writeln!(out, "{v:.17e}")?;
    }
    Ok(())
}
