//! Bernoulli KL-divergence confidence bounds and the union-bound radius.
//!
//! The upper/lower confidence bounds for an empirical mean `p_hat` at radius
//! `a` are the extreme points of `{ q in [0,1] : d(p_hat, q) <= a }`, found by
//! bisection. By Pinsker's inequality they are never wider than the Hoeffding
//! interval `p_hat +- sqrt(a / 2)`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Fixed iteration count for the bound bisections. 100 halvings of a unit
/// interval are far below f64 resolution, so the result is as tight as the
/// representation allows; the documented guarantee is absolute tolerance 1e-9.
const BISECT_ITERS: u32 = 100;

/// Confidence radius in nats. Non-negative and finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct BoundRadius(f64);

impl BoundRadius {
    pub fn new(a: f64) -> Self {
        assert!(a >= 0.0 && a.is_finite(), "radius must be finite and >= 0, got {a}");
        Self(a)
    }

    pub fn nats(self) -> f64 {
        self.0
    }
}

fn assert_unit(x: f64, what: &str) {
    assert!(
        (0.0..=1.0).contains(&x),
        "{what} must lie in [0, 1], got {x}"
    );
}

/// Bernoulli KL divergence `d(p, q) = p ln(p/q) + (1-p) ln((1-p)/(1-q))`,
/// with the conventions `0 ln(0/x) = 0` and `d(p, q) = +inf` when `q` is 0
/// or 1 and `p != q`.
pub fn kl_bernoulli(p: f64, q: f64) -> f64 {
    assert_unit(p, "p");
    assert_unit(q, "q");
    if p == q {
        return 0.0;
    }
    if q == 0.0 || q == 1.0 {
        return f64::INFINITY;
    }
    let mut d = 0.0;
    if p > 0.0 {
        d += p * (p / q).ln();
    }
    if p < 1.0 {
        d += (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
    }
    d
}

/// Largest `q in [p_hat, 1]` with `kl_bernoulli(p_hat, q) <= a`.
pub fn kl_ucb(p_hat: f64, radius: BoundRadius) -> f64 {
    assert_unit(p_hat, "p_hat");
    let a = radius.nats();
    if a == 0.0 || p_hat >= 1.0 {
        return p_hat;
    }
    // Invariant: d(lo) <= a < d(hi). d(p_hat, 1) = +inf for p_hat < 1.
    let (mut lo, mut hi) = (p_hat, 1.0);
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        if kl_bernoulli(p_hat, mid) <= a {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Smallest `q in [0, p_hat]` with `kl_bernoulli(p_hat, q) <= a`.
pub fn kl_lcb(p_hat: f64, radius: BoundRadius) -> f64 {
    assert_unit(p_hat, "p_hat");
    let a = radius.nats();
    if a == 0.0 || p_hat <= 0.0 {
        return p_hat;
    }
    // Invariant: d(lo) > a >= d(hi).
    let (mut lo, mut hi) = (0.0, p_hat);
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        if kl_bernoulli(p_hat, mid) <= a {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Union-bound confidence radius for a configuration with `m` samples at
/// captime `kappa`, when `n` configurations are live:
/// `(1/m) ln(36 n^2 m^2 (ln(kappa + 1))^2 / delta)`, natural logs throughout.
///
/// `delta` above 1 is accepted (useful for solving the formula backwards in
/// tests); real runs use `delta` in (0, 1), where the argument of the outer
/// log exceeds 1 whenever `kappa >= 1`.
pub fn radius(n: usize, m: u64, kappa: f64, delta: f64) -> BoundRadius {
    assert!(n >= 1, "need at least one configuration");
    assert!(m >= 1, "need at least one sample");
    assert!(kappa > 0.0 && kappa.is_finite(), "captime must be positive");
    assert!(delta > 0.0 && delta.is_finite(), "delta must be positive");
    let n = n as f64;
    let m = m as f64;
    let log_term = (kappa + 1.0).ln();
    let a = (36.0 * n * n * m * m * log_term * log_term / delta).ln() / m;
    BoundRadius::new(a.max(0.0))
}

/// Hoeffding deviation at the same confidence level as a KL radius:
/// `sqrt(a / 2)`.
pub fn hoeffding_radius(radius: BoundRadius) -> f64 {
    (radius.nats() / 2.0).sqrt()
}

/// Lower confidence bound on the uncapped mean utility, assembled from a
/// lower bound on the capped mean, a lower bound on the completion fraction,
/// and the utility at the captime:
/// `max(0, u_lcb - u_at_kappa * (1 - f_lcb))`.
pub fn composite_lcb(u_lcb: f64, f_lcb: f64, u_at_kappa: f64) -> f64 {
    assert_unit(u_lcb, "u_lcb");
    assert_unit(f_lcb, "f_lcb");
    assert_unit(u_at_kappa, "u_at_kappa");
    (u_lcb - u_at_kappa * (1.0 - f_lcb)).max(0.0)
}

/// Probability that a fresh random configuration beats everything sampled so
/// far, given `n_prime` random samples: `(1/n') ln(pi^2 n'^2 / (3 delta))`.
pub fn gamma_guarantee(n_prime: usize, delta: f64) -> f64 {
    assert!(n_prime >= 1);
    assert!(delta > 0.0 && delta < 1.0);
    let np = n_prime as f64;
    (PI * PI * np * np / (3.0 * delta)).ln() / np
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn kl_at_equal_arguments_is_zero() {
        assert_eq!(kl_bernoulli(0.5, 0.5), 0.0);
        assert_eq!(kl_bernoulli(0.0, 0.0), 0.0);
        assert_eq!(kl_bernoulli(1.0, 1.0), 0.0);
    }

    #[test]
    fn kl_closed_forms() {
        // d(0, q) = -ln(1 - q)
        assert_abs_diff_eq!(kl_bernoulli(0.0, 0.5), 0.6931471805599453, epsilon = 1e-15);
        // d(0.3, 0.7) = 0.4 ln(7/3); Pinsker floor 2 * 0.4^2 = 0.32
        let d = kl_bernoulli(0.3, 0.7);
        assert!(d >= 0.32);
        assert_abs_diff_eq!(d, 0.33891914415488145, epsilon = 1e-15);
    }

    #[test]
    fn kl_boundary_conventions() {
        assert_eq!(kl_bernoulli(0.5, 0.0), f64::INFINITY);
        assert_eq!(kl_bernoulli(0.5, 1.0), f64::INFINITY);
        assert_eq!(kl_bernoulli(0.0, 1.0), f64::INFINITY);
        assert_eq!(kl_bernoulli(1.0, 0.0), f64::INFINITY);
    }

    #[test]
    #[should_panic(expected = "must lie in [0, 1]")]
    fn kl_rejects_out_of_range() {
        kl_bernoulli(1.2, 0.5);
    }

    #[test]
    fn ucb_zero_radius_is_identity() {
        for p in [0.0, 0.25, 0.5, 1.0] {
            assert_eq!(kl_ucb(p, BoundRadius::new(0.0)), p);
            assert_eq!(kl_lcb(p, BoundRadius::new(0.0)), p);
        }
    }

    #[test]
    fn ucb_of_zero_matches_closed_form() {
        // d(0, q) = -ln(1 - q) = a  =>  q = 1 - e^-a
        for (a, expect) in [
            (0.1, 0.09516258196404048),
            (0.7, 0.5034146962085905),
            (2.0, 0.8646647167633873),
        ] {
            assert_abs_diff_eq!(kl_ucb(0.0, BoundRadius::new(a)), expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn lcb_of_one_matches_closed_form() {
        // d(1, q) = -ln(q) = a  =>  q = e^-a
        for (a, expect) in [
            (0.1, 0.9048374180359595),
            (0.7, 0.4965853037914095),
            (2.0, 0.1353352832366127),
        ] {
            assert_abs_diff_eq!(kl_lcb(1.0, BoundRadius::new(a)), expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn saturated_bounds() {
        assert_eq!(kl_ucb(1.0, BoundRadius::new(3.0)), 1.0);
        assert_eq!(kl_lcb(0.0, BoundRadius::new(3.0)), 0.0);
    }

    #[test]
    fn radius_solves_to_zero() {
        // delta = 36 (ln 2)^2 makes the log argument exactly 1.
        let a = radius(1, 1, 1.0, 17.29630850105525);
        assert_abs_diff_eq!(a.nats(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn radius_decreases_with_more_samples() {
        let a100 = radius(10, 100, 1.0, 0.01);
        let a200 = radius(10, 200, 1.0, 0.01);
        assert_abs_diff_eq!(a100.nats(), 0.21271173841245147, epsilon = 1e-12);
        assert_abs_diff_eq!(a200.nats(), 0.1132873410118252, epsilon = 1e-12);
        assert!(a200.nats() < a100.nats());
    }

    #[test]
    fn radius_direct_evaluation() {
        let a = radius(10, 10, 1.0, 0.01);
        assert_abs_diff_eq!(a.nats(), 1.6666003655257056, epsilon = 1e-12);
    }

    #[test]
    fn hoeffding_radius_examples() {
        assert_eq!(hoeffding_radius(BoundRadius::new(0.0)), 0.0);
        assert_eq!(hoeffding_radius(BoundRadius::new(2.0)), 1.0);
        assert_eq!(hoeffding_radius(BoundRadius::new(0.5)), 0.5);
    }

    #[test]
    fn composite_lcb_examples() {
        assert_eq!(composite_lcb(0.7, 1.0, 0.9), 0.7);
        assert_eq!(composite_lcb(0.7, 0.3, 0.0), 0.7);
        assert_abs_diff_eq!(composite_lcb(0.5, 0.8, 0.5), 0.4, epsilon = 1e-15);
        assert_eq!(composite_lcb(0.1, 0.0, 0.9), 0.0); // clamped
    }

    #[test]
    fn gamma_guarantee_direct_evaluation() {
        assert_abs_diff_eq!(gamma_guarantee(100, 0.01), 0.15006358040994966, epsilon = 1e-12);
    }

    #[test]
    fn gamma_strictly_decreasing_in_n_prime() {
        for delta in [0.001, 0.01, 0.1] {
            let mut prev = gamma_guarantee(1, delta);
            for np in 2..=10_000 {
                let g = gamma_guarantee(np, delta);
                assert!(g < prev, "gamma({np}) = {g} >= gamma({}) = {prev}", np - 1);
                prev = g;
            }
        }
    }

    proptest! {
        // Pinsker domination: KL bounds are never wider than Hoeffding's.
        #[test]
        fn pinsker_domination(p in 0.0..=1.0f64, a in 0.0..8.0f64) {
            let r = BoundRadius::new(a);
            let h = hoeffding_radius(r);
            prop_assert!(kl_ucb(p, r) <= (p + h).min(1.0) + 1e-12);
            prop_assert!(kl_lcb(p, r) >= (p - h).max(0.0) - 1e-12);
        }

        #[test]
        fn bounds_monotone_in_radius(p in 0.0..=1.0f64, a1 in 0.0..6.0f64, a2 in 0.0..6.0f64) {
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            prop_assert!(kl_ucb(p, BoundRadius::new(lo)) <= kl_ucb(p, BoundRadius::new(hi)) + 1e-9);
            prop_assert!(kl_lcb(p, BoundRadius::new(lo)) >= kl_lcb(p, BoundRadius::new(hi)) - 1e-9);
        }

        #[test]
        fn bounds_converge_to_p_hat(p in 0.0..=1.0f64) {
            prop_assert!((kl_ucb(p, BoundRadius::new(1e-12)) - p).abs() < 1e-5);
            prop_assert!((kl_lcb(p, BoundRadius::new(1e-12)) - p).abs() < 1e-5);
        }

        // Strict monotonicity of d(p, .) away from p justifies the bisection.
        #[test]
        fn kl_strictly_monotone_each_side(p in 0.0..=1.0f64, q1 in 0.0..1.0f64, q2 in 0.0..1.0f64) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            if lo > p && hi > lo {
                prop_assert!(kl_bernoulli(p, lo) < kl_bernoulli(p, hi));
            }
            if hi < p && hi > lo {
                prop_assert!(kl_bernoulli(p, lo) > kl_bernoulli(p, hi));
            }
        }

        #[test]
        fn bisection_residual(p in 0.0..=1.0f64, a in 0.0..8.0f64) {
            let r = BoundRadius::new(a);
            for b in [kl_ucb(p, r), kl_lcb(p, r)] {
                if b > 1e-9 && b < 1.0 - 1e-9 && (b - p).abs() > 1e-12 {
                    prop_assert!((kl_bernoulli(p, b) - a).abs() <= 1e-6,
                        "residual {} at p={p}, a={a}, bound={b}", (kl_bernoulli(p, b) - a).abs());
                }
            }
        }
    }
}
