//! Flat `key = value` run configuration. Later assignments override earlier
//! ones, so command-line flags are applied after the file.
//!
//! ```text
//! # comment
//! rho = 0.03
//! horizon = infinite:300
//! x0 = steady          # y_inf of the current parameters
//! init = lognormal:0.5
//! ```

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::model::{steady_state, InitialDistribution, ModelParams, SolverConfig, TimeGrid};

/// Grid points per unit time on finite horizons when `steps` is not given.
pub const DEFAULT_STEPS_PER_UNIT: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Horizon {
    Finite(f64),
    Infinite(f64),
}

impl Horizon {
    pub fn parse(text: &str) -> Result<Self> {
        let (kind, value) = text
            .split_once(':')
            .ok_or_else(|| MfgError::Config(format!("horizon '{text}': expected finite:<T> or infinite:<smax>")))?;
        let v = parse_f64("horizon", value)?;
        if !(v.is_finite() && v > 0.0) {
            return Err(MfgError::Config(format!("horizon length {v} must be positive")));
        }
        match kind.trim() {
            "finite" => Ok(Horizon::Finite(v)),
            "infinite" => Ok(Horizon::Infinite(v)),
            other => Err(MfgError::Config(format!("unknown horizon kind '{other}'"))),
        }
    }

    pub fn length(&self) -> f64 {
        match *self {
            Horizon::Finite(t) | Horizon::Infinite(t) => t,
        }
    }
}

/// Shape of the initial law; the mean always comes from `x0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum InitShape {
    Point,
    /// Log-volatility.
    LogNormal(f64),
    /// Half-width of a uniform law centred on `x0`.
    Uniform(f64),
}

impl InitShape {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "point" {
            return Ok(InitShape::Point);
        }
        let (kind, value) = text
            .split_once(':')
            .ok_or_else(|| MfgError::Config(format!("init '{text}': expected point, lognormal:<v> or uniform:<halfwidth>")))?;
        let v = parse_f64("init", value)?;
        match kind {
            "lognormal" => Ok(InitShape::LogNormal(v)),
            "uniform" => Ok(InitShape::Uniform(v)),
            other => Err(MfgError::Config(format!("unknown init kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StartValue {
    Value(f64),
    /// The steady state of the configured parameters.
    Steady,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub params: ModelParams,
    pub horizon: Horizon,
    pub x0: StartValue,
    pub init: InitShape,
    /// Grid steps on `[0, T]` or `[0, s_max]`; derived from the horizon when absent.
    pub steps: Option<usize>,
    pub solver: SolverConfig,
    pub paths: usize,
    pub sigmas: Vec<f64>,
    pub store_paths: usize,
    /// Snapshot times of the `deterministic` subcommand.
    pub times: Vec<f64>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: ModelParams::reference(0.1),
            horizon: Horizon::Finite(30.0),
            x0: StartValue::Value(10.0),
            init: InitShape::Point,
            steps: None,
            solver: SolverConfig::default(),
            paths: 100_000,
            sigmas: vec![0.001, 0.01, 0.1],
            store_paths: 10,
            times: vec![0.0, 10.0, 20.0, 30.0],
            out: PathBuf::from("out"),
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| MfgError::Config(format!("{key}: '{v}' is not a number")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse::<usize>()
        .map_err(|_| MfgError::Config(format!("{key}: '{v}' is not a nonnegative integer")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| parse_f64(key, s)).collect()
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| MfgError::Config(format!("line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MfgError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply(&parse_pairs(&text)?)?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "rho" => self.params.rho = parse_f64(key, value)?,
            "delta" => self.params.delta = parse_f64(key, value)?,
            "beta" => self.params.beta = parse_f64(key, value)?,
            "sigma" => self.params.sigma = parse_f64(key, value)?,
            "horizon" => self.horizon = Horizon::parse(value)?,
            "x0" => {
                self.x0 = if value.trim() == "steady" {
                    StartValue::Steady
                } else {
                    StartValue::Value(parse_f64(key, value)?)
                }
            }
            "init" => self.init = InitShape::parse(value)?,
            "steps" => self.steps = Some(parse_usize(key, value)?),
            "paths" => self.paths = parse_usize(key, value)?,
            "seed" => {
                self.solver.rng_seed = value
                    .trim()
                    .parse()
                    .map_err(|_| MfgError::Config(format!("seed: '{value}' is not a 64-bit integer")))?
            }
            "out" => self.out = PathBuf::from(value.trim()),
            "sigmas" => self.sigmas = parse_list(key, value)?,
            "store-paths" => self.store_paths = parse_usize(key, value)?,
            "times" => self.times = parse_list(key, value)?,
            "tol" => self.solver.tol_fixed_point = parse_f64(key, value)?,
            "max-iterations" => self.solver.max_iterations = parse_usize(key, value)?,
            "damping" => self.solver.damping = parse_f64(key, value)?,
            "tol-shoot" => self.solver.tol_shoot_zeta = parse_f64(key, value)?,
            "tol-steady" => self.solver.tol_steady = parse_f64(key, value)?,
            "extension" => self.solver.extension = parse_f64(key, value)?,
            other => return Err(MfgError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Parameter, solver and horizon checks, including `beta < 1 + rho/delta`
    /// for infinite horizons.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.solver.validate()?;
        if let Horizon::Infinite(_) = self.horizon {
            self.params.check_infinite_horizon()?;
        }
        if self.steps == Some(0) || self.steps == Some(1) {
            return Err(MfgError::Config("steps must be at least 2".into()));
        }
        if self.paths == 0 {
            return Err(MfgError::Config("paths must be at least 1".into()));
        }
        if self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(MfgError::Config("sigmas must be nonnegative".into()));
        }
        self.initial_distribution()?.validate()
    }

    pub fn x0_value(&self) -> Result<f64> {
        match self.x0 {
            StartValue::Value(v) => Ok(v),
            StartValue::Steady => steady_state(&self.params),
        }
    }

    pub fn initial_distribution(&self) -> Result<InitialDistribution> {
        let x = self.x0_value()?;
        let d = match self.init {
            InitShape::Point => InitialDistribution::PointMass(x),
            InitShape::LogNormal(v) => InitialDistribution::LogNormal { mean: x, v },
            InitShape::Uniform(w) => InitialDistribution::Uniform { a: x - w, b: x + w },
        };
        d.validate()?;
        Ok(d)
    }

    /// Grid on `[0, T]` for finite horizons.
    pub fn finite_grid(&self, t_end: f64) -> Result<TimeGrid> {
        let n = self
            .steps
            .unwrap_or_else(|| ((DEFAULT_STEPS_PER_UNIT * t_end).ceil() as usize).max(100));
        TimeGrid::new(t_end, n)
    }

    /// Solver settings with the infinite-horizon step taken from `steps`.
    pub fn infinite_solver(&self, s_max: f64) -> SolverConfig {
        let mut s = self.solver;
        if let Some(n) = self.steps {
            s.infinite_step = s_max / n as f64;
        }
        s
    }
}
