//! Utility functions over algorithm runtime.
//!
//! A utility function maps a runtime in seconds to a value in `[0, 1]`,
//! encoding how much a run of that length is worth to the user. All families
//! are monotone non-increasing with `u(0) = 1`. Where a family has a cutoff
//! parameter `kappa`, the convention is half-open: runs with `t < kappa` count
//! as solved, runs with `t >= kappa` score zero.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UtilityError {
    #[error("invalid utility parameter: {0}")]
    InvalidParameter(String),
    #[error("cannot parse utility spec `{spec}`: {reason}")]
    Parse { spec: String, reason: String },
}

/// A parametric runtime-utility function.
///
/// Specified in scenario files and CLI flags as `family:param=value,...`,
/// e.g. `logcap:k0=0.001,k1=3600`, `par:c=2,k=5000`, `step:k=5000`,
/// `exp:lambda=0.001`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum UtilityFunction {
    /// 1 on `[0, kappa0]`, 0 on `[kappa1, inf)`, and
    /// `log(t / kappa1) / log(kappa0 / kappa1)` in between. Continuous
    /// everywhere; doubling the runtime removes a constant amount of utility.
    LogCapped { kappa0: f64, kappa1: f64 },
    /// Penalized-average-runtime utility: `1 - t / (c * kappa)` for
    /// `t < kappa`, else 0. Ranking solvers by mean PAR score and by mean
    /// PAR utility is equivalent.
    Par { c: f64, kappa: f64 },
    /// 1 for `t < kappa`, else 0 (proportion of instances solved).
    Step { kappa: f64 },
    /// `exp(-lambda * t)`.
    Exponential { lambda: f64 },
}

impl UtilityFunction {
    pub fn log_capped(kappa0: f64, kappa1: f64) -> Result<Self, UtilityError> {
        if !(kappa0 > 0.0 && kappa0.is_finite()) {
            return Err(UtilityError::InvalidParameter(format!(
                "logcap requires k0 > 0, got {kappa0}"
            )));
        }
        if !(kappa1 > kappa0 && kappa1.is_finite()) {
            return Err(UtilityError::InvalidParameter(format!(
                "logcap requires k1 > k0, got k0={kappa0}, k1={kappa1}"
            )));
        }
        Ok(Self::LogCapped { kappa0, kappa1 })
    }

    pub fn par(c: f64, kappa: f64) -> Result<Self, UtilityError> {
        if !(c >= 1.0 && c.is_finite()) {
            return Err(UtilityError::InvalidParameter(format!(
                "par requires c >= 1, got {c}"
            )));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(UtilityError::InvalidParameter(format!(
                "par requires k > 0, got {kappa}"
            )));
        }
        Ok(Self::Par { c, kappa })
    }

    pub fn step(kappa: f64) -> Result<Self, UtilityError> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(UtilityError::InvalidParameter(format!(
                "step requires k > 0, got {kappa}"
            )));
        }
        Ok(Self::Step { kappa })
    }

    pub fn exponential(lambda: f64) -> Result<Self, UtilityError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(UtilityError::InvalidParameter(format!(
                "exp requires lambda > 0, got {lambda}"
            )));
        }
        Ok(Self::Exponential { lambda })
    }

    /// Utility of a runtime of `t` seconds.
    ///
    /// Panics if `t` is negative or not finite.
    pub fn evaluate(&self, t: f64) -> f64 {
        assert!(t >= 0.0 && t.is_finite(), "runtime must be finite and >= 0, got {t}");
        match *self {
            Self::LogCapped { kappa0, kappa1 } => {
                if t <= kappa0 {
                    1.0
                } else if t >= kappa1 {
                    0.0
                } else {
                    (t / kappa1).ln() / (kappa0 / kappa1).ln()
                }
            }
            Self::Par { c, kappa } => {
                if t < kappa {
                    1.0 - t / (c * kappa)
                } else {
                    0.0
                }
            }
            Self::Step { kappa } => {
                if t < kappa {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Exponential { lambda } => (-lambda * t).exp(),
        }
    }

    /// Runtimes at which the function is non-smooth, in increasing order.
    /// Used by the measure-form expected-utility integral.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            Self::LogCapped { kappa0, kappa1 } => vec![kappa0, kappa1],
            Self::Par { kappa } | Self::Step { kappa } => vec![kappa],
            Self::Exponential { .. } => vec![],
        }
    }
}

/// Penalized average runtime score of a single run: `t` if the run finished
/// before the timeout `kappa`, else `c * kappa`.
pub fn par_score(t: f64, c: f64, kappa: f64) -> f64 {
    assert!(t >= 0.0 && t.is_finite(), "runtime must be finite and >= 0, got {t}");
    assert!(c >= 1.0 && kappa > 0.0, "par_score requires c >= 1 and kappa > 0");
    if t < kappa {
        t
    } else {
        c * kappa
    }
}

impl fmt::Display for UtilityFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::LogCapped { kappa0, kappa1 } => write!(f, "logcap:k0={kappa0},k1={kappa1}"),
            Self::Par { c, kappa } => write!(f, "par:c={c},k={kappa}"),
            Self::Step { kappa } => write!(f, "step:k={kappa}"),
            Self::Exponential { lambda } => write!(f, "exp:lambda={lambda}"),
        }
    }
}

impl FromStr for UtilityFunction {
    type Err = UtilityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| UtilityError::Parse {
            spec: s.to_string(),
            reason: reason.to_string(),
        };
        let (family, rest) = s.split_once(':').ok_or_else(|| err("expected `family:params`"))?;
        let mut params = std::collections::BTreeMap::new();
        for pair in rest.split(',') {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| err(&format!("expected `key=value`, got `{pair}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| err(&format!("`{v}` is not a number")))?;
            if params.insert(k.trim().to_string(), v).is_some() {
                return Err(err(&format!("duplicate parameter `{k}`")));
            }
        }
        let get = |key: &str| {
            params
                .get(key)
                .copied()
                .ok_or_else(|| err(&format!("missing parameter `{key}`")))
        };
        let expect_keys = |keys: &[&str]| {
            for k in params.keys() {
                if !keys.contains(&k.as_str()) {
                    return Err(err(&format!("unknown parameter `{k}`")));
                }
            }
            Ok(())
        };
        match family.trim() {
            "logcap" => {
                expect_keys(&["k0", "k1"])?;
                Self::log_capped(get("k0")?, get("k1")?)
            }
            "par" => {
                expect_keys(&["c", "k"])?;
                Self::par(get("c")?, get("k")?)
            }
            "step" => {
                expect_keys(&["k"])?;
                Self::step(get("k")?)
            }
            "exp" => {
                expect_keys(&["lambda"])?;
                Self::exponential(get("lambda")?)
            }
            other => Err(err(&format!("unknown family `{other}`"))),
        }
    }
}

impl TryFrom<String> for UtilityFunction {
    type Error = UtilityError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<UtilityFunction> for String {
    fn from(u: UtilityFunction) -> String {
        u.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn logcap_constant_region_boundary() {
        let u = UtilityFunction::log_capped(0.001, 3600.0).unwrap();
        assert_eq!(u.evaluate(0.001), 1.0);
        assert_eq!(u.evaluate(0.0), 1.0);
        assert_eq!(u.evaluate(3600.0), 0.0);
        assert_eq!(u.evaluate(1e9), 0.0);
    }

    #[test]
    fn par_hand_evaluated() {
        let u = UtilityFunction::par(2.0, 5000.0).unwrap();
        assert_abs_diff_eq!(u.evaluate(2500.0), 0.75);
        assert_eq!(u.evaluate(5000.0), 0.0); // t = kappa is censored
        assert_eq!(u.evaluate(0.0), 1.0);
    }

    #[test]
    fn step_half_open_at_kappa() {
        let u = UtilityFunction::step(10.0).unwrap();
        assert_eq!(u.evaluate(10.0), 0.0);
        assert_eq!(u.evaluate(9.999999), 1.0);
    }

    #[test]
    fn exponential_at_zero() {
        let u = UtilityFunction::exponential(0.37).unwrap();
        assert_eq!(u.evaluate(0.0), 1.0);
    }

    #[test]
    #[should_panic(expected = "runtime must be finite")]
    fn negative_runtime_rejected() {
        UtilityFunction::step(1.0).unwrap().evaluate(-0.1);
    }

    #[test]
    fn par_score_examples() {
        assert_eq!(par_score(100.0, 2.0, 5000.0), 100.0);
        assert_eq!(par_score(5000.0, 2.0, 5000.0), 10000.0);
        assert_eq!(par_score(5000.0, 1.0, 5000.0), 5000.0);
    }

    #[test]
    fn invalid_parameters_are_construction_errors() {
        assert!(UtilityFunction::log_capped(0.0, 10.0).is_err());
        assert!(UtilityFunction::log_capped(10.0, 10.0).is_err());
        assert!(UtilityFunction::par(0.5, 100.0).is_err());
        assert!(UtilityFunction::par(2.0, 0.0).is_err());
        assert!(UtilityFunction::step(-1.0).is_err());
        assert!(UtilityFunction::exponential(0.0).is_err());
    }

    #[test]
    fn logcap_continuity_at_knots() {
        for (k0, k1) in [(0.001, 3600.0), (0.05, 50.0), (1.0, 2.0)] {
            let u = UtilityFunction::log_capped(k0, k1).unwrap();
            for knot in [k0, k1] {
                let eps = 1e-9 * knot;
                let jump = (u.evaluate(knot - eps) - u.evaluate(knot + eps)).abs();
                assert!(jump < 1e-7, "jump {jump} at knot {knot} for {u}");
            }
        }
    }

    #[test]
    fn parse_round_trip() {
        for spec in [
            "logcap:k0=0.001,k1=3600",
            "par:c=2,k=5000",
            "step:k=5000",
            "exp:lambda=0.001",
        ] {
            let u: UtilityFunction = spec.parse().unwrap();
            let back: UtilityFunction = u.to_string().parse().unwrap();
            assert_eq!(u, back);
        }
        assert!("logcap:k0=1".parse::<UtilityFunction>().is_err());
        assert!("par:c=2,k=5000,z=1".parse::<UtilityFunction>().is_err());
        assert!("nosuch:k=1".parse::<UtilityFunction>().is_err());
        assert!("step:k=abc".parse::<UtilityFunction>().is_err());
        assert!("step".parse::<UtilityFunction>().is_err());
    }

    fn arb_utility() -> impl Strategy<Value = UtilityFunction> {
        prop_oneof![
            (1e-4..10.0f64, 1.01..100.0f64).prop_map(|(k0, f)| {
                UtilityFunction::log_capped(k0, k0 * f).unwrap()
            }),
            (1.0..20.0f64, 1e-3..1e4f64).prop_map(|(c, k)| UtilityFunction::par(c, k).unwrap()),
            (1e-3..1e4f64).prop_map(|k| UtilityFunction::step(k).unwrap()),
            (1e-4..10.0f64).prop_map(|l| UtilityFunction::exponential(l).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn utility_in_unit_interval_and_monotone(u in arb_utility(), t1 in 0.0..1e5f64, t2 in 0.0..1e5f64) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let (ulo, uhi) = (u.evaluate(lo), u.evaluate(hi));
            prop_assert!((0.0..=1.0).contains(&ulo));
            prop_assert!((0.0..=1.0).contains(&uhi));
            prop_assert!(ulo >= uhi, "u({lo})={ulo} < u({hi})={uhi} for {u}");
        }

        // Ordering solvers by ascending mean PAR score equals ordering by
        // descending mean PAR utility.
        #[test]
        fn par_ranking_equivalence(
            tables in proptest::collection::vec(
                proptest::collection::vec(0.0..7500.0f64, 1..100), 1..10),
            c in 1.0..10.0f64,
        ) {
            let kappa = 5000.0;
            let u = UtilityFunction::par(c, kappa).unwrap();
            let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
            let scores: Vec<f64> = tables.iter()
                .map(|t| mean(&t.iter().map(|&x| par_score(x, c, kappa)).collect::<Vec<_>>()))
                .collect();
            let utils: Vec<f64> = tables.iter()
                .map(|t| mean(&t.iter().map(|&x| u.evaluate(x)).collect::<Vec<_>>()))
                .collect();
            let mut by_score: Vec<usize> = (0..tables.len()).collect();
            by_score.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]).then(i.cmp(&j)));
            let mut by_util: Vec<usize> = (0..tables.len()).collect();
            by_util.sort_by(|&i, &j| utils[j].total_cmp(&utils[i]).then(i.cmp(&j)));
            prop_assert_eq!(by_score, by_util);
        }
    }
}
