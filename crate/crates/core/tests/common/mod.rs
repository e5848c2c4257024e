//! Independent reference implementations used only by the tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssamp::scalar::SsfMessage;
use std::cell::RefCell;

use astro_float::{BigFloat, Consts, RoundingMode};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs()
    }
}

// 15-point Kronrod nodes and weights with the embedded 7-point Gauss rule,
// digits as published.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// Kronrod estimate and `|Kronrod - Gauss|` on `[a, b]`.
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let pair = f(c - x) + f(c + x);
        k += WGK[j] * pair;
        if j % 2 == 1 {
            g += WG[j / 2] * pair;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Globally adaptive Gauss-Kronrod: repeatedly bisects the interval with
/// the largest error estimate until the total estimate is within
/// `max(abs_tol, rel_tol * |I|)` or the interval budget runs out.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, breaks: &[f64], abs_tol: f64, rel_tol: f64) -> f64 {
    use std::collections::BinaryHeap;
    // Nonnegative floats order like their bit patterns.
    let mut heap = BinaryHeap::new();
    let (mut total, mut err) = (0.0, 0.0);
    for w in breaks.windows(2) {
        let (k, e) = gk15(f, w[0], w[1]);
        total += k;
        err += e;
        heap.push((e.to_bits(), w[0].to_bits(), w[1].to_bits(), k.to_bits()));
    }
    for _ in 0..20_000 {
        if err <= abs_tol.max(rel_tol * total.abs()) {
            break;
        }
        let Some((e, a, b, k)) = heap.pop() else { break };
        let (a, b) = (f64::from_bits(a), f64::from_bits(b));
        let m = 0.5 * (a + b);
        let (k1, e1) = gk15(f, a, m);
        let (k2, e2) = gk15(f, m, b);
        total += k1 + k2 - f64::from_bits(k);
        err += e1 + e2 - f64::from_bits(e);
        heap.push((e1.to_bits(), a.to_bits(), m.to_bits(), k1.to_bits()));
        heap.push((e2.to_bits(), m.to_bits(), b.to_bits(), k2.to_bits()));
    }
    heap.iter().map(|p| f64::from_bits(p.3)).sum()
}

fn ln_gauss(x: f64, m: f64, v: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (x - m) * (x - m) / (2.0 * v)
}

fn ln_ssf(x: f64, msg: &SsfMessage) -> f64 {
    let a = msg.spike_weight.ln() + ln_gauss(x, msg.mean, msg.variance);
    let b = (1.0 - msg.spike_weight).ln() + ln_gauss(x, msg.mean, msg.variance + msg.slab_extra_variance);
    let hi = a.max(b);
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Mean and variance of the density proportional to
/// `N(x; rho, theta) * prod(msgs)`, by quadrature.
pub fn quad_moments(rho: f64, theta: f64, msgs: &[SsfMessage]) -> (f64, f64) {
    let ln_f = |x: f64| ln_gauss(x, rho, theta) + msgs.iter().map(|m| ln_ssf(x, m)).sum::<f64>();

    // Every Gaussian pairing is centred between the inputs; seed the grid
    // with each input mean and with the precision-weighted combinations.
    let mut centers = vec![rho];
    let mut precisions = vec![1.0 / theta];
    let mut widest = theta;
    for m in msgs {
        centers.push(m.mean);
        for v in [m.variance, m.variance + m.slab_extra_variance] {
            precisions.push(1.0 / v);
            widest = widest.max(v);
            let p = 1.0 / theta + 1.0 / v;
            centers.push((rho / theta + m.mean / v) / p);
        }
    }
    if msgs.len() == 2 {
        for va in [msgs[0].variance, msgs[0].variance + msgs[0].slab_extra_variance] {
            for vb in [msgs[1].variance, msgs[1].variance + msgs[1].slab_extra_variance] {
                let p = 1.0 / theta + 1.0 / va + 1.0 / vb;
                centers.push((rho / theta + msgs[0].mean / va + msgs[1].mean / vb) / p);
            }
        }
    }
    let narrow = 1.0 / precisions.iter().sum::<f64>();
    let shift = centers.iter().map(|&c| ln_f(c)).fold(f64::NEG_INFINITY, f64::max);
    let lo = centers.iter().copied().fold(f64::INFINITY, f64::min) - 40.0 * widest.sqrt();
    let hi = centers.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 40.0 * widest.sqrt();
    let mut breaks = vec![lo, hi];
    let h = narrow.sqrt();
    // Unit spacing near each center, then geometric spacing outwards so
    // no tail interval is wide enough for both rules to miss the mass.
    let mut offsets: Vec<f64> = (1..=8).map(f64::from).collect();
    while *offsets.last().unwrap() * h < hi - lo {
        offsets.push(offsets.last().unwrap() * 1.5);
    }
    for &c in &centers {
        breaks.push(c);
        for &o in &offsets {
            breaks.push(c - o * h);
            breaks.push(c + o * h);
        }
    }
    breaks.retain(|b| *b >= lo && *b <= hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let dens = |x: f64| (ln_f(x) - shift).exp();
    let z = integrate(&dens, &breaks, 0.0, 1e-14);
    let scale = centers.iter().fold(0.0f64, |a, c| a.max(c.abs())) + widest.sqrt();
    let mean = integrate(&|x| x * dens(x), &breaks, 1e-14 * z * scale, 1e-14) / z;
    let var = integrate(&|x| (x - mean) * (x - mean) * dens(x), &breaks, 1e-14 * z * narrow, 1e-14) / z;
    (mean, var)
}

pub fn random_message(rng: &mut ChaCha8Rng) -> SsfMessage {
    SsfMessage {
        mean: rng.random_range(-5.0..5.0),
        variance: log_uniform(rng, 1e-2, 10.0),
        spike_weight: rng.random_range(0.02..0.98),
        slab_extra_variance: log_uniform(rng, 0.1, 10.0),
    }
}

/// `0.5 ||rho - x||^2 + lambda sum |x[i+1] - x[i]|`.
pub fn tv_objective(rho: &[f64], x: &[f64], lambda: f64) -> f64 {
    let fit: f64 = rho.iter().zip(x).map(|(r, v)| 0.5 * (r - v) * (r - v)).sum();
    let tv: f64 = x.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    fit + lambda * tv
}

/// TV prox by accelerated projected gradient on the dual
/// `min_{|z| <= lambda} 0.5 ||rho - D^T z||^2`, with `x = rho - D^T z`.
pub fn tv_prox_dual(rho: &[f64], lambda: f64, iters: usize) -> Vec<f64> {
    let n = rho.len();
    if n < 2 {
        return rho.to_vec();
    }
    let dt = |z: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|j| {
                let left = if j > 0 { z[j - 1] } else { 0.0 };
                let right = if j < n - 1 { z[j] } else { 0.0 };
                left - right
            })
            .collect()
    };
    let step = 0.25;
    let mut z = vec![0.0; n - 1];
    let mut w = z.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let x: Vec<f64> = rho.iter().zip(dt(&w)).map(|(r, d)| r - d).collect();
        // gradient in z of the dual objective is -(D x)
        let z_next: Vec<f64> = (0..n - 1)
            .map(|i| (w[i] + step * (x[i + 1] - x[i])).clamp(-lambda, lambda))
            .collect();
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        w = z_next.iter().zip(&z).map(|(a, b)| a + mom * (a - b)).collect();
        z = z_next;
        t = t_next;
    }
    rho.iter().zip(dt(&z)).map(|(r, d)| r - d).collect()
}

/// Largest violation of the optimality conditions of the TV prox at `x`.
/// The dual certificate is recovered by cumulative summation of
/// `rho - x`; jumps are detected with `jump_tol`.
pub fn tv_kkt_residual(rho: &[f64], x: &[f64], lambda: f64, jump_tol: f64) -> f64 {
    let n = rho.len();
    let mut z = 0.0;
    let mut worst: f64 = 0.0;
    for j in 0..n {
        z -= rho[j] - x[j];
        if j == n - 1 {
            worst = worst.max(z.abs());
            break;
        }
        let jump = x[j + 1] - x[j];
        // (D^T z)_j = z_{j-1} - z_j = rho_j - x_j  =>  z_j = z_{j-1} - (rho_j - x_j)
        let viol = if jump.abs() > jump_tol {
            (z - lambda * jump.signum()).abs()
        } else {
            (z.abs() - lambda).max(0.0)
        };
        worst = worst.max(viol);
    }
    worst
}

/// Arbitrary-precision scalar with just the operations the oracles need.
#[derive(Clone)]
pub struct Big(BigFloat);

const PREC: usize = 320;
const RM: RoundingMode = RoundingMode::ToEven;

thread_local! {
    static CONSTS: RefCell<Consts> = RefCell::new(Consts::new().unwrap());
}

impl Big {
    pub fn new(v: f64) -> Self {
        Big(BigFloat::from_f64(v, PREC))
    }
    pub fn add(&self, o: &Big) -> Big {
        Big(self.0.add(&o.0, PREC, RM))
    }
    pub fn sub(&self, o: &Big) -> Big {
        Big(self.0.sub(&o.0, PREC, RM))
    }
    pub fn mul(&self, o: &Big) -> Big {
        Big(self.0.mul(&o.0, PREC, RM))
    }
    pub fn div(&self, o: &Big) -> Big {
        Big(self.0.div(&o.0, PREC, RM))
    }
    pub fn exp(&self) -> Big {
        CONSTS.with(|c| Big(self.0.exp(PREC, RM, &mut c.borrow_mut())))
    }
    pub fn ln(&self) -> Big {
        CONSTS.with(|c| Big(self.0.ln(PREC, RM, &mut c.borrow_mut())))
    }
    pub fn sqrt(&self) -> Big {
        Big(self.0.sqrt(PREC, RM))
    }
    pub fn pi() -> Big {
        CONSTS.with(|c| Big(c.borrow_mut().pi(PREC, RM)))
    }
    /// Round to the nearest double through the decimal expansion.
    pub fn to_f64(&self) -> f64 {
        format!("{}", self.0).parse().unwrap()
    }
}

/// Extended-precision evaluation of the EM formulas for one difference.
pub struct EmOracle {
    pub pi: Big,
    pub gamma: Big,
    pub nu: Big,
}

/// `pi = 1 / (1 + (1-q)/q * N(0; s, 2 theta) / N(s; 0, 2 theta + sigma0^2))`.
pub fn em_oracle(s: f64, theta: f64, q: f64, sigma0_sq: f64) -> EmOracle {
    let (s, theta, q, v0) = (Big::new(s), Big::new(theta), Big::new(q), Big::new(sigma0_sq));
    let one = Big::new(1.0);
    let two = Big::new(2.0);
    let two_theta = two.mul(&theta);
    let wide = two_theta.add(&v0);
    let s2 = s.mul(&s);
    // ratio of the two Gaussian densities, written out directly
    let exponent = s2.div(&two.mul(&wide)).sub(&s2.div(&two.mul(&two_theta)));
    let ratio = one.sub(&q).div(&q).mul(&wide.div(&two_theta).sqrt()).mul(&exponent.exp());
    EmOracle {
        pi: one.div(&one.add(&ratio)),
        gamma: s.div(&two_theta.div(&v0).add(&one)),
        nu: one.div(&one.div(&v0).add(&one.div(&two_theta))),
    }
}

/// Extended-precision M-step: `(q_new, sigma0_sq_new)`.
pub fn em_step_oracle(rho: &[f64], theta: f64, q: f64, sigma0_sq: f64) -> (f64, f64) {
    let mut sum_pi = Big::new(0.0);
    let mut sum_second = Big::new(0.0);
    for w in rho.windows(2) {
        let o = em_oracle(w[1] - w[0], theta, q, sigma0_sq);
        sum_pi = sum_pi.add(&o.pi);
        sum_second = sum_second.add(&o.pi.mul(&o.gamma.mul(&o.gamma).add(&o.nu)));
    }
    let count = Big::new((rho.len() - 1) as f64);
    let q_new = sum_pi.div(&count).to_f64().clamp(1e-8, 1.0 - 1e-8);
    let s_new = sum_second.div(&Big::new(q_new).mul(&count)).to_f64().max(1e-12);
    (q_new, s_new)
}

/// Materializes any operator column by column through `apply`.
pub fn dense_by_columns(op: &dyn ssamp::LinearOperator) -> Vec<Vec<f64>> {
    let (m, n) = (op.rows(), op.cols());
    let mut h = vec![vec![0.0; n]; m];
    let mut e = vec![0.0; n];
    for i in 0..n {
        e[i] = 1.0;
        let col = op.apply(&e).unwrap();
        for j in 0..m {
            h[j][i] = col[j];
        }
        e[i] = 0.0;
    }
    h
}

pub fn matvec(h: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    h.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
