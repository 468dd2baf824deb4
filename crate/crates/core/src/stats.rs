//! Numerical primitives shared by the selection and discrimination stages.

use crate::error::{Error, Result};

/// `ln C(n, k)` by direct summation over the shorter side.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    let k = k.min(n - k);
    let mut acc = 0.0;
    for i in 1..=k {
        acc += ((n - k + i) as f64 / i as f64).ln();
    }
    acc
}

/// Log of the binomial probability mass `P(X = k)`, `X ~ Bin(n, p)`.
pub fn binomial_ln_pmf(n: u64, p: f64, k: u64) -> Result<f64> {
    check_binomial(n, p, k)?;
    Ok(ln_pmf_unchecked(n, p, k))
}

pub fn binomial_pmf(n: u64, p: f64, k: u64) -> Result<f64> {
    binomial_ln_pmf(n, p, k).map(f64::exp)
}

fn ln_pmf_unchecked(n: u64, p: f64, k: u64) -> f64 {
    if p == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if p == 1.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p()
}

fn check_binomial(n: u64, p: f64, k: u64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("probability {p} outside [0, 1]")));
    }
    if k > n {
        return Err(Error::domain(format!("count {k} exceeds trials {n}")));
    }
    Ok(())
}

/// Upper tail `P(X >= k)` for `X ~ Bin(n, p)`, summed in log space.
///
/// Terms are generated by the ratio recurrence from the first term and
/// combined with a running log-sum-exp, so no term underflows before the
/// final exponentiation.
pub fn binomial_tail(n: u64, p: f64, k: u64) -> Result<f64> {
    binomial_ln_tail(n, p, k).map(f64::exp)
}

/// `ln P(X >= k)`.
pub fn binomial_ln_tail(n: u64, p: f64, k: u64) -> Result<f64> {
    check_binomial(n, p, k)?;
    if k == 0 {
        return Ok(0.0);
    }
    if p == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if p == 1.0 {
        return Ok(0.0);
    }
    let ln_odds = p.ln() - (-p).ln_1p();
    let mut term = ln_pmf_unchecked(n, p, k);
    let mut max = term;
    let mut scaled_sum = 1.0;
    for j in k..n {
        term += ((n - j) as f64 / (j + 1) as f64).ln() + ln_odds;
        if term > max {
            scaled_sum = scaled_sum * (max - term).exp() + 1.0;
            max = term;
        } else {
            scaled_sum += (term - max).exp();
        }
    }
    Ok((max + scaled_sum.ln()).min(0.0))
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Normal density with mean `mu` and width `sigma`.
pub fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_tail_is_one() {
        assert_eq!(binomial_tail(40, 0.5, 0).unwrap(), 1.0);
    }

    #[test]
    fn two_fair_coins_both_heads() {
        assert!((binomial_tail(2, 0.5, 2).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn count_beyond_trials_is_domain_error() {
        assert!(matches!(binomial_tail(10, 0.3, 11), Err(Error::Domain(_))));
        assert!(matches!(binomial_tail(10, 1.3, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn degenerate_probabilities() {
        assert_eq!(binomial_tail(10, 0.0, 1).unwrap(), 0.0);
        assert_eq!(binomial_tail(10, 1.0, 10).unwrap(), 1.0);
        assert_eq!(binomial_pmf(10, 1.0, 9).unwrap(), 0.0);
    }

    #[test]
    fn pmf_sums_to_one() {
        let s: f64 = (0..=105).map(|k| binomial_pmf(105, 0.145, k).unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_tails_stay_finite_in_log_space() {
        let ln = binomial_ln_tail(200, 0.01, 200).unwrap();
        assert!((ln - 200.0 * 0.01f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(-1.0) - 0.158_655_253_931_457).abs() < 1e-12);
    }
}
