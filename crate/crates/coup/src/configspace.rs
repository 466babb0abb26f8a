//! Parameter-space schema, configuration sampling, normalization, and the
//! one-exchange / truncated-Gaussian neighborhood used by the local search.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Standard deviation of the neighborhood Gaussian in normalized space.
const NEIGHBOR_SIGMA: f64 = 0.2;
/// Neighbors drawn per continuous parameter.
const NEIGHBORS_PER_CONTINUOUS: usize = 4;
/// Rejection-sampling attempts before falling back to clamping.
const TRUNC_GAUSS_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("configuration space must have at least one parameter")]
    Empty,
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("parameter `{0}`: {1}")]
    BadParameter(String, String),
    #[error("configuration does not match space: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ParameterKind {
    Categorical {
        values: Vec<String>,
    },
    Continuous {
        lower: f64,
        upper: f64,
        #[serde(default)]
        log: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDef {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParameterKind,
}

/// A concrete value for one parameter. Serializes as a bare string or number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Cat(String),
    Real(f64),
}

/// Parameter assignment keyed by parameter name.
pub type ValueMap = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Random,
    Model,
}

/// A sampled configuration. Ids are assigned by the engine in sampling order,
/// so they are unique and strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub id: u64,
    pub provenance: Provenance,
    pub values: ValueMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ParameterDef>", into = "Vec<ParameterDef>")]
pub struct ConfigurationSpace {
    params: Vec<ParameterDef>,
}

impl ConfigurationSpace {
    pub fn new(params: Vec<ParameterDef>) -> Result<Self, SpaceError> {
        if params.is_empty() {
            return Err(SpaceError::Empty);
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &params {
            if !seen.insert(p.name.clone()) {
                return Err(SpaceError::DuplicateName(p.name.clone()));
            }
            match &p.kind {
                ParameterKind::Categorical { values } => {
                    if values.is_empty() {
                        return Err(SpaceError::BadParameter(
                            p.name.clone(),
                            "categorical needs at least one value".into(),
                        ));
                    }
                    let mut vs = std::collections::BTreeSet::new();
                    for v in values {
                        if !vs.insert(v) {
                            return Err(SpaceError::BadParameter(
                                p.name.clone(),
                                format!("duplicate categorical value `{v}`"),
                            ));
                        }
                    }
                }
                ParameterKind::Continuous { lower, upper, log } => {
                    if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                        return Err(SpaceError::BadParameter(
                            p.name.clone(),
                            format!("need lower < upper, got [{lower}, {upper}]"),
                        ));
                    }
                    if *log && *lower <= 0.0 {
                        return Err(SpaceError::BadParameter(
                            p.name.clone(),
                            "log-scale parameters need lower > 0".into(),
                        ));
                    }
                }
            }
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[ParameterDef] {
        &self.params
    }

    /// Length of the normalized encoding: one slot per continuous parameter,
    /// one block per categorical.
    pub fn encoded_len(&self) -> usize {
        self.params
            .iter()
            .map(|p| match &p.kind {
                ParameterKind::Categorical { values } => values.len(),
                ParameterKind::Continuous { .. } => 1,
            })
            .sum()
    }

    /// Number of distinct configurations, when the space is fully discrete.
    pub fn finite_cardinality(&self) -> Option<u128> {
        self.params.iter().try_fold(1u128, |acc, p| match &p.kind {
            ParameterKind::Categorical { values } => acc.checked_mul(values.len() as u128),
            ParameterKind::Continuous { .. } => None,
        })
    }

    /// Uniform sample: each categorical uniform over its values, each
    /// continuous uniform over `[lower, upper]` (over the log range when
    /// log-scaled).
    pub fn sample_values(&self, rng: &mut ChaCha8Rng) -> ValueMap {
        self.params
            .iter()
            .map(|p| {
                let v = match &p.kind {
                    ParameterKind::Categorical { values } => {
                        ParamValue::Cat(values[rng.random_range(0..values.len())].clone())
                    }
                    ParameterKind::Continuous { lower, upper, log } => {
                        let x = rng.random_range(0.0..1.0);
                        ParamValue::Real(continuous_from_unit(x, *lower, *upper, *log))
                    }
                };
                (p.name.clone(), v)
            })
            .collect()
    }

    pub fn sample_random(&self, id: u64, rng: &mut ChaCha8Rng) -> Configuration {
        Configuration {
            id,
            provenance: Provenance::Random,
            values: self.sample_values(rng),
        }
    }

    /// Normalized encoding: continuous parameters mapped (log-)affinely to
    /// `[0, 1]`, categorical parameters one-hot.
    pub fn normalize(&self, values: &ValueMap) -> Result<Vec<f64>, SpaceError> {
        if values.len() != self.params.len() {
            return Err(SpaceError::Mismatch(format!(
                "expected {} values, got {}",
                self.params.len(),
                values.len()
            )));
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        for p in &self.params {
            let v = values
                .get(&p.name)
                .ok_or_else(|| SpaceError::Mismatch(format!("missing parameter `{}`", p.name)))?;
            match (&p.kind, v) {
                (ParameterKind::Categorical { values: opts }, ParamValue::Cat(s)) => {
                    let idx = opts.iter().position(|o| o == s).ok_or_else(|| {
                        SpaceError::Mismatch(format!("`{s}` is not a value of `{}`", p.name))
                    })?;
                    for i in 0..opts.len() {
                        out.push(if i == idx { 1.0 } else { 0.0 });
                    }
                }
                (ParameterKind::Continuous { lower, upper, log }, ParamValue::Real(x)) => {
                    if !(x >= lower && x <= upper) {
                        return Err(SpaceError::Mismatch(format!(
                            "`{}` = {x} outside [{lower}, {upper}]",
                            p.name
                        )));
                    }
                    out.push(unit_from_continuous(*x, *lower, *upper, *log));
                }
                _ => {
                    return Err(SpaceError::Mismatch(format!(
                        "wrong value type for `{}`",
                        p.name
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`normalize`](Self::normalize). One-hot blocks decode to the
    /// largest entry (first on ties); unit coordinates are clamped to `[0, 1]`.
    pub fn denormalize(&self, encoded: &[f64]) -> Result<ValueMap, SpaceError> {
        if encoded.len() != self.encoded_len() {
            return Err(SpaceError::Mismatch(format!(
                "expected encoding of length {}, got {}",
                self.encoded_len(),
                encoded.len()
            )));
        }
        let mut out = ValueMap::new();
        let mut i = 0;
        for p in &self.params {
            match &p.kind {
                ParameterKind::Categorical { values } => {
                    let block = &encoded[i..i + values.len()];
                    let best = block
                        .iter()
                        .enumerate()
                        .max_by(|(ia, a), (ib, b)| a.total_cmp(b).then(ib.cmp(ia)))
                        .map(|(idx, _)| idx)
                        .unwrap();
                    out.insert(p.name.clone(), ParamValue::Cat(values[best].clone()));
                    i += values.len();
                }
                ParameterKind::Continuous { lower, upper, log } => {
                    let x = encoded[i].clamp(0.0, 1.0);
                    out.insert(
                        p.name.clone(),
                        ParamValue::Real(continuous_from_unit(x, *lower, *upper, *log)),
                    );
                    i += 1;
                }
            }
        }
        Ok(out)
    }

    /// One-exchange neighbors for categorical parameters, plus four truncated
    /// Gaussian draws in normalized space per continuous parameter. Every
    /// neighbor differs from the source in exactly one parameter.
    pub fn neighbors(
        &self,
        values: &ValueMap,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<ValueMap>, SpaceError> {
        // Validate up front so invalid inputs fail rather than propagate.
        self.normalize(values)?;
        let mut out = Vec::new();
        for p in &self.params {
            match &p.kind {
                ParameterKind::Categorical { values: opts } => {
                    let current = match &values[&p.name] {
                        ParamValue::Cat(s) => s.clone(),
                        _ => unreachable!("validated above"),
                    };
                    for alt in opts.iter().filter(|o| **o != current) {
                        let mut v = values.clone();
                        v.insert(p.name.clone(), ParamValue::Cat(alt.clone()));
                        out.push(v);
                    }
                }
                ParameterKind::Continuous { lower, upper, log } => {
                    let current = match &values[&p.name] {
                        ParamValue::Real(x) => *x,
                        _ => unreachable!("validated above"),
                    };
                    let mean = unit_from_continuous(current, *lower, *upper, *log);
                    for _ in 0..NEIGHBORS_PER_CONTINUOUS {
                        let x = truncated_gaussian(mean, NEIGHBOR_SIGMA, rng);
                        let mut v = values.clone();
                        v.insert(
                            p.name.clone(),
                            ParamValue::Real(continuous_from_unit(x, *lower, *upper, *log)),
                        );
                        out.push(v);
                    }
                }
            }
        }
        Ok(out)
    }
}

impl TryFrom<Vec<ParameterDef>> for ConfigurationSpace {
    type Error = SpaceError;
    fn try_from(params: Vec<ParameterDef>) -> Result<Self, Self::Error> {
        Self::new(params)
    }
}

impl From<ConfigurationSpace> for Vec<ParameterDef> {
    fn from(s: ConfigurationSpace) -> Self {
        s.params
    }
}

fn unit_from_continuous(x: f64, lower: f64, upper: f64, log: bool) -> f64 {
    if log {
        (x.ln() - lower.ln()) / (upper.ln() - lower.ln())
    } else {
        (x - lower) / (upper - lower)
    }
}

fn continuous_from_unit(x: f64, lower: f64, upper: f64, log: bool) -> f64 {
    let v = if log {
        (lower.ln() + x * (upper.ln() - lower.ln())).exp()
    } else {
        lower + x * (upper - lower)
    };
    v.clamp(lower, upper)
}

/// Gaussian truncated to `[0, 1]` by rejection, clamping after
/// `TRUNC_GAUSS_ATTEMPTS` failures. With sigma 0.2 and mean in `[0, 1]`
/// rejection succeeds almost immediately; the fallback is unreachable in
/// practice but keeps the draw total.
fn truncated_gaussian(mean: f64, sigma: f64, rng: &mut ChaCha8Rng) -> f64 {
    let normal = Normal::new(mean, sigma).expect("sigma is a positive constant");
    for _ in 0..TRUNC_GAUSS_ATTEMPTS {
        let x = normal.sample(rng);
        if (0.0..=1.0).contains(&x) {
            return x;
        }
    }
    normal.sample(rng).clamp(0.0, 1.0)
}
