use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{One, ToPrimitive, Zero};

use qburst::selection::{
    compute_control_bounds, compute_signal_threshold, noise_rate, NoiseModel, SelectionConfig,
};
use qburst::stats::{binomial_pmf, binomial_tail};
use qburst::trigger::TriggerConfig;

/// `P(X >= k)` with `p = num/den`, summed exactly.
fn exact_tail(n: u32, num: u32, den: u32, k: u32) -> f64 {
    let p = Ratio::new(BigUint::from(num), BigUint::from(den));
    let q = Ratio::one() - &p;
    let mut sum = Ratio::<BigUint>::zero();
    let mut choose = BigUint::one();
    for j in 0..=n {
        if j >= k {
            sum += Ratio::from_integer(choose.clone()) * num_traits::pow(p.clone(), j as usize)
                * num_traits::pow(q.clone(), (n - j) as usize);
        }
        choose = choose * BigUint::from(n - j) / BigUint::from(j + 1);
    }
    sum.to_f64().unwrap()
}

#[test]
fn tail_matches_exact_rationals() {
    for (num, den) in [(147u32, 1000u32), (1, 20), (3, 10)] {
        let p = num as f64 / den as f64;
        for k in 0..=40 {
            let exact = exact_tail(40, num, den, k);
            let got = binomial_tail(40, p, k as u64).unwrap();
            assert!(((got - exact) / exact).abs() < 1e-9, "p={p} k={k}: {got} vs {exact}");
        }
    }
}

#[test]
fn pmf_sums_to_one() {
    let s: f64 = (0..=105).map(|k| binomial_pmf(105, 0.176, k).unwrap()).sum();
    assert!((s - 1.0).abs() < 1e-12);
}

#[test]
fn signal_threshold_is_monotone() {
    let trig = TriggerConfig::default();
    let cfg = SelectionConfig::default();
    let mut last = 0;
    for i in 0..=60 {
        let p = 0.05 + 0.005 * i as f64;
        let n = compute_signal_threshold(p, 60.0, &trig, &cfg).unwrap();
        assert!(n >= last, "non-monotone in P(g) at {p}");
        last = n;
    }
    let mut last = usize::MAX;
    for ts in [20.0, 40.0, 60.0, 73.6, 100.0, 200.0] {
        let n = compute_signal_threshold(0.15, ts, &trig, &cfg).unwrap();
        assert!(n <= last, "non-monotone in T_S at {ts}");
        last = n;
    }
}

#[test]
fn chosen_cut_meets_the_noise_target() {
    let trig = TriggerConfig::default();
    for model in [NoiseModel::Unconditioned, NoiseModel::TriggerConditioned] {
        let cfg = SelectionConfig {
            noise_model: model,
            ..SelectionConfig::default()
        };
        for p in [0.1, 0.147, 0.2] {
            let n = compute_signal_threshold(p, 50.0, &trig, &cfg).unwrap();
            assert!(noise_rate(p, 50.0, n, &trig, model).unwrap() < 1e-4);
            if n > trig.n_consecutive {
                assert!(noise_rate(p, 50.0, n - 1, &trig, model).unwrap() >= 1e-4);
            }
        }
    }
}

#[test]
fn control_bounds_bracket_the_mean() {
    let trig = TriggerConfig::default();
    let cfg = SelectionConfig::default();
    for p in [0.1, 0.15, 0.2, 0.3] {
        let (lo, hi) = compute_control_bounds(p, &trig, &cfg).unwrap();
        let mean = 105.0 * p;
        assert!((lo as f64) < mean && mean < hi as f64);
        assert!(binomial_pmf(105, p, lo as u64).unwrap() >= 0.01);
        assert!(binomial_pmf(105, p, lo as u64 - 1).unwrap() < 0.01);
        assert!(binomial_pmf(105, p, hi as u64 + 1).unwrap() < 0.01);
    }
}
