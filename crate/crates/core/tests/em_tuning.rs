mod common;

use common::{em_oracle, Big, em_step_oracle, log_uniform, rel_err, rng};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use ssamp::harness::{make_instance, ExperimentConfig};
use ssamp::solver::{em_posterior, em_update, init_state, iterate, PriorParams, SolverConfig, Q_MAX, Q_MIN};

fn close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * want.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn extended_precision_helpers_are_accurate() {
    assert_eq!(Big::new(1.0).exp().to_f64(), std::f64::consts::E);
    assert_eq!(Big::new(2.0).sqrt().to_f64(), std::f64::consts::SQRT_2);
    assert_eq!(Big::new(2.0).ln().to_f64(), std::f64::consts::LN_2);
    // 1/3 is not representable; the rounded result must still be the nearest double
    assert_eq!(Big::new(1.0).div(&Big::new(3.0)).to_f64(), 1.0 / 3.0);
}

#[test]
fn posterior_matches_extended_precision() {
    let mut r = rng(21);
    for _ in 0..1000 {
        let s = r.sample::<f64, _>(StandardNormal) * log_uniform(&mut r, 1e-2, 1e2);
        let theta = log_uniform(&mut r, 1e-6, 10.0);
        let q = r.random_range(1e-3..1.0 - 1e-3);
        let v0 = log_uniform(&mut r, 1e-3, 1e3);
        let got = em_posterior(s, theta, q, v0).unwrap();
        let want = em_oracle(s, theta, q, v0);
        // pi is a probability; compare relative to 1 as well as to itself
        let pi = want.pi.to_f64();
        assert!((got.pi - pi).abs() <= 1e-12 * pi.max(1e-300) || (got.pi - pi).abs() <= 1e-15, "pi {} vs {pi}", got.pi);
        assert!(close(got.gamma, want.gamma.to_f64(), 1e-12) || s == 0.0);
        assert!(close(got.nu, want.nu.to_f64(), 1e-12));
    }
}

#[test]
fn equal_variance_case_by_direct_formula() {
    // q = 1/2 and sigma0^2 = 2 theta: pi = 1 / (1 + sqrt(2) exp(-s^2 / (8 theta)))
    let theta = 0.3;
    for s in [-2.0f64, -0.5, 0.0, 0.1, 1.7] {
        let want = 1.0 / (1.0 + 2f64.sqrt() * (-s * s / (8.0 * theta)).exp());
        let got = em_posterior(s, theta, 0.5, 2.0 * theta).unwrap();
        assert!(rel_err(got.pi, want) < 1e-14, "{s}: {} vs {want}", got.pi);
        assert!(rel_err(got.nu, theta) < 1e-15);
        assert!((got.gamma - s / 2.0).abs() < 1e-15);
    }
}

#[test]
fn m_step_matches_extended_precision() {
    let mut r = rng(22);
    for _ in 0..1000 {
        let n = r.random_range(2..60);
        let scale = log_uniform(&mut r, 1e-2, 1e2);
        let rho: Vec<f64> = (0..n).map(|_| scale * r.sample::<f64, StandardNormal>(StandardNormal)).collect();
        let theta = log_uniform(&mut r, 1e-6, 10.0);
        let q = r.random_range(1e-3..1.0 - 1e-3);
        let v0 = log_uniform(&mut r, 1e-3, 1e3);
        let got = em_update(&rho, theta, &PriorParams::new(q, v0, 0.1).unwrap()).unwrap();
        let (q_want, v_want) = em_step_oracle(&rho, theta, q, v0);
        assert!(close(got.q, q_want, 1e-12), "q {} vs {q_want}", got.q);
        assert!(close(got.sigma0_sq, v_want, 1e-12), "sigma0^2 {} vs {v_want}", got.sigma0_sq);
        assert_eq!(got.delta, 0.1);
    }
}

#[test]
fn flat_pseudodata_lowers_q() {
    let p = PriorParams::new(0.3, 1.0, 0.0).unwrap();
    let post = em_posterior(0.0, 0.2, p.q, p.sigma0_sq).unwrap();
    assert!(post.pi < p.q);
    let next = em_update(&[1.5; 12], 0.2, &p).unwrap();
    assert!((next.q - post.pi).abs() < 1e-15);
    assert!(next.q < p.q);
}

proptest! {
    #[test]
    fn updates_stay_in_range(
        rho in prop::collection::vec(-1e6..1e6f64, 2..40),
        lt in -12.0..6.0f64,
        q in 0.0..1.0f64,
        lv in -12.0..12.0f64,
    ) {
        let p = PriorParams { q, sigma0_sq: 10f64.powf(lv), delta: 0.0 }.clamped();
        let next = em_update(&rho, 10f64.powf(lt), &p).unwrap();
        prop_assert!(next.q >= Q_MIN && next.q <= Q_MAX);
        prop_assert!(next.sigma0_sq >= 1e-12 && next.sigma0_sq.is_finite());
    }
}

#[test]
fn em_recovers_jump_rate_within_factor_two() {
    // N = 2000 Gaussian PWC with q = 0.05, M/N = 0.5; 30 EM iterations
    let mut good = 0;
    for seed in 0..20u64 {
        let cfg = ExperimentConfig { n: 2000, exact_k: false, seed_base: seed, ..Default::default() };
        let k_target = (0.05 * 1999.0_f64).round() as usize;
        let inst = make_instance(&cfg, 1000, k_target, seed).unwrap();
        let op = inst.op.as_ref();
        let mut params = PriorParams::em_default(op, &inst.y, 0.0).unwrap();
        let config = SolverConfig { em_enabled: true, ..SolverConfig::default() };
        let mut state = init_state(2000, 1000, &inst.y, &params).unwrap();
        for _ in 0..30 {
            iterate(&mut state, op, &inst.y, &mut params, &config).unwrap();
        }
        if params.q >= 0.025 && params.q <= 0.1 {
            good += 1;
        }
    }
    assert!(good >= 18, "{good}/20 within a factor of two");
}
