//! Log densities used by the shipped models, generic over [`Real`].
//!
//! Functions suffixed `_logit` take a unit-interval variable through its
//! logit, which keeps `ln p` and `ln(1 - p)` accurate near the boundaries.

use std::f64::consts::PI;

use crate::ad::Real;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub fn normal_lpdf<R: Real>(x: R, mu: R, sigma: R) -> R {
    let z = (x - mu) / sigma;
    -(z.square() * 0.5) - sigma.ln() - HALF_LN_2PI
}

/// Normal log density with the scale given as `ln sigma`.
pub fn normal_lpdf_log_scale<R: Real>(x: R, mu: R, log_sigma: R) -> R {
    let z = (x - mu) * (-log_sigma).exp();
    -(z.square() * 0.5) - log_sigma - HALF_LN_2PI
}

pub fn ln_beta_fn<R: Real>(a: R, b: R) -> R {
    a.ln_gamma() + b.ln_gamma() - (a + b).ln_gamma()
}

/// Beta(a, b) log density at `x = sigmoid(logit)`.
pub fn beta_lpdf_logit<R: Real>(logit: R, a: R, b: R) -> R {
    let ln_x = logit.log_sigmoid();
    let ln_1mx = (-logit).log_sigmoid();
    (a - 1.0) * ln_x + (b - 1.0) * ln_1mx - ln_beta_fn(a, b)
}

/// Beta(a, b) log density at `x` given directly on the unit interval.
pub fn beta_lpdf<R: Real>(x: f64, a: R, b: R) -> R {
    (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta_fn(a, b)
}

/// Bernoulli log mass of `outcome` with success probability `sigmoid(logit)`.
pub fn bernoulli_logit_lpmf<R: Real>(outcome: bool, logit: R) -> R {
    if outcome {
        logit.log_sigmoid()
    } else {
        (-logit).log_sigmoid()
    }
}

/// Binomial log mass of `y` successes in `n` trials with probability
/// `sigmoid(logit)`, including the binomial coefficient.
pub fn binomial_logit_lpmf<R: Real>(y: u64, n: u64, logit: R) -> R {
    let ln_choose = ln_choose(n, y);
    let mut acc = R::from_f64(ln_choose);
    if y > 0 {
        acc += logit.log_sigmoid() * y as f64;
    }
    if n > y {
        acc += (-logit).log_sigmoid() * (n - y) as f64;
    }
    acc
}

pub fn ln_choose(n: u64, k: u64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `ln(2 pi) / 2`, exposed for oracles in tests.
pub fn half_ln_2pi() -> f64 {
    0.5 * (2.0 * PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_matches_closed_form() {
        let v: f64 = normal_lpdf(1.0, 0.0, 2.0);
        let expect = -0.125 - 2f64.ln() - half_ln_2pi();
        assert!((v - expect).abs() < 1e-14);
        let w: f64 = normal_lpdf_log_scale(1.0, 0.0, 2f64.ln());
        assert!((v - w).abs() < 1e-14);
    }

    #[test]
    fn beta_two_two_at_half_is_one_point_five() {
        // Beta(2,2) pdf = 6x(1-x); at 0.5 that is 1.5.
        let v: f64 = beta_lpdf_logit(0.0, 2.0, 2.0);
        assert!((v - 1.5f64.ln()).abs() < 1e-13);
        let w: f64 = beta_lpdf(0.3, 2.0, 2.0);
        assert!((w - (6.0 * 0.3 * 0.7f64).ln()).abs() < 1e-13);
    }

    #[test]
    fn binomial_sums_to_one() {
        let total: f64 = (0..=7u64)
            .map(|y| binomial_logit_lpmf(y, 7, 0.4f64).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_extreme_logits_stay_finite() {
        let a: f64 = bernoulli_logit_lpmf(true, -700.0);
        let b: f64 = bernoulli_logit_lpmf(false, 700.0);
        assert!(a.is_finite() && b.is_finite());
    }
}
