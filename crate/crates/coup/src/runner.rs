//! Execution backends producing censored runtime observations.
//!
//! Two backends: a seeded simulated-runtime oracle used for verification and
//! desk-scale experiments, and a subprocess backend that enforces the captime
//! on real solver runs.

use crate::configspace::{Configuration, ConfigurationSpace, ParamValue};
use crate::utility::UtilityFunction;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config {config_id} on instance {instance}: failed to spawn `{command}`: {source}")]
    Spawn {
        config_id: u64,
        instance: u64,
        command: String,
        source: std::io::Error,
    },
    #[error("config {config_id} on instance {instance}: crashed with {status}")]
    Crashed {
        config_id: u64,
        instance: u64,
        status: String,
    },
    #[error("config {config_id} on instance {instance}: io error: {source}")]
    Io {
        config_id: u64,
        instance: u64,
        source: std::io::Error,
    },
    #[error("subprocess captime must be at least 1 second, got {0}")]
    CaptimeTooSmall(f64),
    #[error("instance list `{0}` is empty")]
    NoInstances(String),
    #[error("cannot read instance list `{path}`: {source}")]
    InstanceList {
        path: String,
        source: std::io::Error,
    },
    #[error("simulation model: {0}")]
    Model(String),
}

/// Outcome of one (configuration, instance, captime) execution.
///
/// `censored` implies `runtime` equals the requested captime; otherwise
/// `runtime` is strictly below it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub runtime: f64,
    pub censored: bool,
    pub instance_index: u64,
    pub config_id: u64,
}

pub trait Runner: Send + Sync {
    fn run(
        &self,
        config: &Configuration,
        instance_index: u64,
        captime: f64,
    ) -> Result<RunResult, RunnerError>;

    /// Simulated runners account time in simulated seconds rather than wall
    /// clock; the driver uses this to keep trajectory logs deterministic.
    fn simulated(&self) -> bool {
        false
    }
}

// ---------------------------------------------------------------------------
// Runtime distributions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum RuntimeDist {
    Exponential { rate: f64 },
    Lognormal { mu: f64, sigma: f64 },
    Fixed { t: f64 },
}

impl RuntimeDist {
    pub fn validate(&self) -> Result<(), RunnerError> {
        let ok = match *self {
            RuntimeDist::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            RuntimeDist::Lognormal { mu, sigma } => mu.is_finite() && sigma > 0.0 && sigma.is_finite(),
            RuntimeDist::Fixed { t } => t > 0.0 && t.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(RunnerError::Model(format!("invalid distribution {self:?}")))
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let t = match *self {
            RuntimeDist::Exponential { rate } => {
                rand_distr::Exp::new(rate).expect("validated").sample(rng)
            }
            RuntimeDist::Lognormal { mu, sigma } => {
                rand_distr::LogNormal::new(mu, sigma).expect("validated").sample(rng)
            }
            RuntimeDist::Fixed { t } => t,
        };
        t.max(f64::MIN_POSITIVE)
    }

    /// Expected (uncapped) utility `E[u(t)]` under this distribution, exact
    /// where a closed form exists and piecewise quadrature otherwise.
    pub fn true_utility(&self, u: &UtilityFunction) -> f64 {
        match *self {
            RuntimeDist::Fixed { t } => u.evaluate(t),
            RuntimeDist::Exponential { rate } => expected_utility_exponential(rate, u),
            RuntimeDist::Lognormal { mu, sigma } => expected_utility_lognormal(mu, sigma, u),
        }
    }
}

/// Smooth branches of a utility function between its breakpoints.
enum Branch {
    Const(f64),
    LogRamp { kappa0: f64, kappa1: f64 },
    ParRamp { c: f64, kappa: f64 },
    ExpCurve { lambda: f64 },
}

impl Branch {
    fn eval(&self, t: f64) -> f64 {
        match *self {
            Branch::Const(v) => v,
            Branch::LogRamp { kappa0, kappa1 } => (t / kappa1).ln() / (kappa0 / kappa1).ln(),
            Branch::ParRamp { c, kappa } => 1.0 - t / (c * kappa),
            Branch::ExpCurve { lambda } => (-lambda * t).exp(),
        }
    }
}

/// `(lo, hi, branch)` pieces covering `[0, inf)`.
fn pieces(u: &UtilityFunction) -> Vec<(f64, f64, Branch)> {
    match *u {
        UtilityFunction::LogCapped { kappa0, kappa1 } => vec![
            (0.0, kappa0, Branch::Const(1.0)),
            (kappa0, kappa1, Branch::LogRamp { kappa0, kappa1 }),
            (kappa1, f64::INFINITY, Branch::Const(0.0)),
        ],
        UtilityFunction::Par { c, kappa } => vec![
            (0.0, kappa, Branch::ParRamp { c, kappa }),
            (kappa, f64::INFINITY, Branch::Const(0.0)),
        ],
        UtilityFunction::Step { kappa } => vec![
            (0.0, kappa, Branch::Const(1.0)),
            (kappa, f64::INFINITY, Branch::Const(0.0)),
        ],
        UtilityFunction::Exponential { lambda } => {
            vec![(0.0, f64::INFINITY, Branch::ExpCurve { lambda })]
        }
    }
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    debug_assert!(n % 2 == 0 && n >= 2);
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

const SIMPSON_STEPS: usize = 4096;
/// Standard normal quadrature window; the omitted tail mass is ~3.6e-33.
const NORMAL_RANGE: f64 = 12.0;

fn expected_utility_exponential(rate: f64, u: &UtilityFunction) -> f64 {
    let mut total = 0.0;
    for (lo, hi, branch) in pieces(u) {
        total += match branch {
            Branch::Const(v) => v * ((-rate * lo).exp() - (-rate * hi).exp()),
            Branch::ExpCurve { lambda } => {
                // int e^(-lambda t) r e^(-r t) dt
                let s = rate + lambda;
                rate / s * ((-s * lo).exp() - (-s * hi).exp())
            }
            Branch::ParRamp { c, kappa } => {
                // int (1 - t/(c kappa)) r e^(-r t) dt, hi = kappa is finite
                let mass = (-rate * lo).exp() - (-rate * hi).exp();
                let t_mass = lo * (-rate * lo).exp() - hi * (-rate * hi).exp()
                    + ((-rate * lo).exp() - (-rate * hi).exp()) / rate;
                mass - t_mass / (c * kappa)
            }
            Branch::LogRamp { kappa0, kappa1 } => {
                // log-runtime substitution t = e^s keeps the integrand smooth
                let b = Branch::LogRamp { kappa0, kappa1 };
                simpson(
                    |s: f64| {
                        let t = s.exp();
                        b.eval(t) * rate * (-rate * t).exp() * t
                    },
                    lo.ln(),
                    hi.ln(),
                    SIMPSON_STEPS,
                )
            }
        };
    }
    total.clamp(0.0, 1.0)
}

fn expected_utility_lognormal(mu: f64, sigma: f64, u: &UtilityFunction) -> f64 {
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let z_of = |t: f64| {
        if t <= 0.0 {
            -NORMAL_RANGE
        } else {
            ((t.ln() - mu) / sigma).clamp(-NORMAL_RANGE, NORMAL_RANGE)
        }
    };
    let mut total = 0.0;
    for (lo, hi, branch) in pieces(u) {
        let (za, zb) = (z_of(lo), z_of(hi));
        if zb <= za {
            continue;
        }
        total += simpson(
            |z: f64| branch.eval((mu + sigma * z).exp()) * phi(z),
            za,
            zb,
            SIMPSON_STEPS,
        );
    }
    total.clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Simulated runner
// ---------------------------------------------------------------------------

/// Map from configurations to runtime distributions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimModel {
    /// One distribution per value of a categorical parameter (k-arm scenarios).
    PerValue {
        param: String,
        dists: BTreeMap<String, RuntimeDist>,
    },
    /// Planted optimum over one continuous parameter: the log runtime scale
    /// rises quadratically with normalized distance from `optimum`. With
    /// `sigma = 0` runtimes are deterministic, otherwise lognormal.
    Planted {
        param: String,
        optimum: f64,
        t_best: f64,
        t_worst: f64,
        #[serde(default)]
        sigma: f64,
    },
}

impl SimModel {
    pub fn validate(&self, space: &ConfigurationSpace) -> Result<(), RunnerError> {
        match self {
            SimModel::PerValue { param, dists } => {
                let def = space
                    .params()
                    .iter()
                    .find(|p| &p.name == param)
                    .ok_or_else(|| RunnerError::Model(format!("no parameter `{param}` in space")))?;
                let values = match &def.kind {
                    crate::configspace::ParameterKind::Categorical { values } => values,
                    _ => {
                        return Err(RunnerError::Model(format!(
                            "per_value parameter `{param}` must be categorical"
                        )))
                    }
                };
                for v in values {
                    let d = dists.get(v).ok_or_else(|| {
                        RunnerError::Model(format!("no distribution for `{param}` = `{v}`"))
                    })?;
                    d.validate()?;
                }
                Ok(())
            }
            SimModel::Planted {
                param,
                optimum,
                t_best,
                t_worst,
                sigma,
            } => {
                let def = space
                    .params()
                    .iter()
                    .find(|p| &p.name == param)
                    .ok_or_else(|| RunnerError::Model(format!("no parameter `{param}` in space")))?;
                if !matches!(def.kind, crate::configspace::ParameterKind::Continuous { .. }) {
                    return Err(RunnerError::Model(format!(
                        "planted parameter `{param}` must be continuous"
                    )));
                }
                if !((0.0..=1.0).contains(optimum)
                    && *t_best > 0.0
                    && *t_worst >= *t_best
                    && *sigma >= 0.0)
                {
                    return Err(RunnerError::Model("invalid planted model parameters".into()));
                }
                Ok(())
            }
        }
    }

    pub fn dist_for(
        &self,
        config: &Configuration,
        space: &ConfigurationSpace,
    ) -> Result<RuntimeDist, RunnerError> {
        match self {
            SimModel::PerValue { param, dists } => {
                let v = config
                    .values
                    .get(param)
                    .ok_or_else(|| RunnerError::Model(format!("config lacks `{param}`")))?;
                let key = match v {
                    ParamValue::Cat(s) => s,
                    ParamValue::Real(_) => {
                        return Err(RunnerError::Model(format!("`{param}` is not categorical")))
                    }
                };
                dists
                    .get(key)
                    .copied()
                    .ok_or_else(|| RunnerError::Model(format!("no distribution for `{key}`")))
            }
            SimModel::Planted {
                param,
                optimum,
                t_best,
                t_worst,
                sigma,
            } => {
                let enc = space
                    .normalize(&config.values)
                    .map_err(|e| RunnerError::Model(e.to_string()))?;
                let mut offset = 0;
                let mut x = None;
                for p in space.params() {
                    match &p.kind {
                        crate::configspace::ParameterKind::Categorical { values } => {
                            offset += values.len()
                        }
                        crate::configspace::ParameterKind::Continuous { .. } => {
                            if &p.name == param {
                                x = Some(enc[offset]);
                            }
                            offset += 1;
                        }
                    }
                }
                let x = x.ok_or_else(|| RunnerError::Model(format!("no parameter `{param}`")))?;
                let scale = optimum.max(1.0 - optimum);
                let d = ((x - optimum) / scale).powi(2).clamp(0.0, 1.0);
                let mu = t_best.ln() + (t_worst.ln() - t_best.ln()) * d;
                Ok(if *sigma == 0.0 {
                    RuntimeDist::Fixed { t: mu.exp() }
                } else {
                    RuntimeDist::Lognormal { mu, sigma: *sigma }
                })
            }
        }
    }
}

/// Deterministic per-run stream: the same (seed, config, instance) triple
/// yields the same true runtime in any process, so rerunning a censored run
/// at a higher captime reveals more of the same draw.
fn run_rng(seed: u64, config_id: u64, instance: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&config_id.to_le_bytes());
    key[16..24].copy_from_slice(&instance.to_le_bytes());
    key[24..32].copy_from_slice(&0x9e37_79b9_7f4a_7c15u64.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone)]
pub struct SimRunner {
    space: ConfigurationSpace,
    model: SimModel,
    seed: u64,
}

impl SimRunner {
    pub fn new(space: ConfigurationSpace, model: SimModel, seed: u64) -> Result<Self, RunnerError> {
        model.validate(&space)?;
        Ok(Self { space, model, seed })
    }

    /// The latent runtime the simulation would reveal with an infinite captime.
    pub fn latent_runtime(&self, config: &Configuration, instance: u64) -> Result<f64, RunnerError> {
        let dist = self.model.dist_for(config, &self.space)?;
        Ok(dist.sample(&mut run_rng(self.seed, config.id, instance)))
    }

    pub fn true_utility(
        &self,
        config: &Configuration,
        utility: &UtilityFunction,
    ) -> Result<f64, RunnerError> {
        Ok(self.model.dist_for(config, &self.space)?.true_utility(utility))
    }
}

impl Runner for SimRunner {
    fn run(
        &self,
        config: &Configuration,
        instance_index: u64,
        captime: f64,
    ) -> Result<RunResult, RunnerError> {
        assert!(captime > 0.0, "captime must be positive");
        let t = self.latent_runtime(config, instance_index)?;
        Ok(if t >= captime {
            RunResult {
                runtime: captime,
                censored: true,
                instance_index,
                config_id: config.id,
            }
        } else {
            RunResult {
                runtime: t,
                censored: false,
                instance_index,
                config_id: config.id,
            }
        })
    }

    fn simulated(&self) -> bool {
        true
    }
}

// ---------------------------------------------------------------------------
// Subprocess runner
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrashPolicy {
    /// A crashing run is treated as censored at the captime, so a crashing
    /// configuration never looks good.
    #[default]
    Censor,
    /// A crashing run aborts the procedure.
    Error,
}

/// Runs a command template per instance with wall-clock captime enforcement.
/// On timeout the child gets SIGTERM, then SIGKILL after a two-second grace.
pub struct SubprocessRunner {
    command: String,
    instances: Vec<String>,
    crash_policy: CrashPolicy,
    warned_wrap: AtomicBool,
}

const KILL_GRACE: Duration = Duration::from_secs(2);
const POLL_INTERVAL: Duration = Duration::from_millis(2);

impl SubprocessRunner {
    pub fn from_instance_file(
        command: &str,
        instance_list: &Path,
        crash_policy: CrashPolicy,
    ) -> Result<Self, RunnerError> {
        let text = std::fs::read_to_string(instance_list).map_err(|source| {
            RunnerError::InstanceList {
                path: instance_list.display().to_string(),
                source,
            }
        })?;
        let instances: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        if instances.is_empty() {
            return Err(RunnerError::NoInstances(instance_list.display().to_string()));
        }
        Ok(Self {
            command: command.to_string(),
            instances,
            crash_policy,
            warned_wrap: AtomicBool::new(false),
        })
    }

    pub fn with_instances(
        command: &str,
        instances: Vec<String>,
        crash_policy: CrashPolicy,
    ) -> Result<Self, RunnerError> {
        if instances.is_empty() {
            return Err(RunnerError::NoInstances("<inline>".into()));
        }
        Ok(Self {
            command: command.to_string(),
            instances,
            crash_policy,
            warned_wrap: AtomicBool::new(false),
        })
    }

    fn render(&self, config: &Configuration, instance: &str) -> String {
        let mut cmd = self.command.replace("{instance}", instance);
        for (name, value) in &config.values {
            let v = match value {
                ParamValue::Cat(s) => s.clone(),
                ParamValue::Real(x) => x.to_string(),
            };
            cmd = cmd.replace(&format!("{{{name}}}"), &v);
        }
        cmd
    }
}

impl Runner for SubprocessRunner {
    fn run(
        &self,
        config: &Configuration,
        instance_index: u64,
        captime: f64,
    ) -> Result<RunResult, RunnerError> {
        if captime < 1.0 {
            return Err(RunnerError::CaptimeTooSmall(captime));
        }
        let idx = (instance_index - 1) as usize;
        if idx >= self.instances.len() && !self.warned_wrap.swap(true, Ordering::Relaxed) {
            log::warn!(
                "instance index {instance_index} exceeds list of {}; wrapping around",
                self.instances.len()
            );
        }
        let instance = &self.instances[idx % self.instances.len()];
        let rendered = self.render(config, instance);
        let mut tokens = rendered.split_whitespace();
        let program = tokens.next().ok_or_else(|| RunnerError::Spawn {
            config_id: config.id,
            instance: instance_index,
            command: rendered.clone(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"),
        })?;

        let start = Instant::now();
        let mut child = Command::new(program)
            .args(tokens)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|source| RunnerError::Spawn {
                config_id: config.id,
                instance: instance_index,
                command: rendered.clone(),
                source,
            })?;

        let censored_result = RunResult {
            runtime: captime,
            censored: true,
            instance_index,
            config_id: config.id,
        };
        loop {
            match child.try_wait() {
                Ok(Some(status)) => {
                    let elapsed = start.elapsed().as_secs_f64();
                    if elapsed >= captime {
                        return Ok(censored_result);
                    }
                    if !status.success() {
                        log::warn!(
                            "config {} crashed on instance {instance_index} ({status}); {}",
                            config.id,
                            match self.crash_policy {
                                CrashPolicy::Censor => "scoring as censored",
                                CrashPolicy::Error => "aborting",
                            }
                        );
                        return match self.crash_policy {
                            CrashPolicy::Censor => Ok(censored_result),
                            CrashPolicy::Error => Err(RunnerError::Crashed {
                                config_id: config.id,
                                instance: instance_index,
                                status: status.to_string(),
                            }),
                        };
                    }
                    return Ok(RunResult {
                        runtime: elapsed,
                        censored: false,
                        instance_index,
                        config_id: config.id,
                    });
                }
                Ok(None) => {
                    if start.elapsed().as_secs_f64() >= captime {
                        terminate(&mut child, config.id, instance_index)?;
                        return Ok(censored_result);
                    }
                    std::thread::sleep(POLL_INTERVAL);
                }
                Err(source) => {
                    return Err(RunnerError::Io {
                        config_id: config.id,
                        instance: instance_index,
                        source,
                    })
                }
            }
        }
    }
}

/// SIGTERM, wait out the grace period, then SIGKILL.
fn terminate(
    child: &mut std::process::Child,
    config_id: u64,
    instance: u64,
) -> Result<(), RunnerError> {
    let pid = child.id() as i32;
    // SAFETY: plain signal send to a child we own.
    unsafe {
        libc::kill(pid, libc::SIGTERM);
    }
    let deadline = Instant::now() + KILL_GRACE;
    while Instant::now() < deadline {
        match child.try_wait() {
            Ok(Some(_)) => return Ok(()),
            Ok(None) => std::thread::sleep(POLL_INTERVAL),
            Err(source) => return Err(RunnerError::Io { config_id, instance, source }),
        }
    }
    let _ = child.kill();
    let _ = child.wait();
    Ok(())
}
