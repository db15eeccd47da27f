//! Domain types shared by every solver: parameters, uniform time grids,
//! sampled functions, initial distributions, solver settings and the
//! equilibrium bundle, plus the closed-form steady state.

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::Serialize;

use crate::error::{MfgError, Result};

/// Economic and dynamic constants of the game.
///
/// `rho` discounts profits, `delta` depreciates capacity, `beta` is the
/// inverse demand elasticity in the price term `q^-beta` and `sigma` scales
/// the multiplicative noise on capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    pub rho: f64,
    pub delta: f64,
    pub beta: f64,
    pub sigma: f64,
}

impl ModelParams {
    pub fn new(rho: f64, delta: f64, beta: f64, sigma: f64) -> Result<Self> {
        let p = ModelParams {
            rho,
            delta,
            beta,
            sigma,
        };
        p.validate()?;
        Ok(p)
    }

    /// `beta = 2, delta = 0.01, rho = 0.03`, the reference calibration.
    pub fn reference(sigma: f64) -> Self {
        ModelParams {
            rho: 0.03,
            delta: 0.01,
            beta: 2.0,
            sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, ok: bool| {
            if v.is_finite() && ok {
                Ok(())
            } else {
                Err(MfgError::InvalidParameter(format!("{name} = {v}")))
            }
        };
        check("rho", self.rho, self.rho > 0.0)?;
        check("delta", self.delta, self.delta > 0.0)?;
        check("beta", self.beta, self.beta > 0.0)?;
        check("sigma", self.sigma, self.sigma >= 0.0)?;
        Ok(())
    }

    /// Largest admissible `beta` on the infinite horizon (exclusive).
    pub fn beta_limit(&self) -> f64 {
        1.0 + self.rho / self.delta
    }

    /// Validates the parameters and the infinite-horizon condition `beta < 1 + rho/delta`.
    pub fn check_infinite_horizon(&self) -> Result<()> {
        self.validate()?;
        let limit = self.beta_limit();
        if self.beta < limit {
            Ok(())
        } else {
            Err(MfgError::HorizonCondition {
                beta: self.beta,
                limit,
            })
        }
    }

    /// Same parameters with a different volatility.
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }
}

/// Uniform grid `s_k = k * t_end / n_steps`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(MfgError::InvalidParameter(format!("t_end = {t_end}")));
        }
        if n_steps < 2 {
            return Err(MfgError::InvalidParameter(format!(
                "n_steps = {n_steps} (need at least 2)"
            )));
        }
        Ok(TimeGrid { t_end, n_steps })
    }

    /// Grid on `[0, t_end]` whose step is as close as possible to `step`.
    pub fn with_step(t_end: f64, step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(MfgError::InvalidParameter(format!("step = {step}")));
        }
        let n = (t_end / step).round().max(2.0) as usize;
        TimeGrid::new(t_end, n)
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    pub fn point(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            k as f64 * self.step()
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |k| self.point(k))
    }

    /// Index of the grid point nearest to `s` (clamped to the grid).
    pub fn nearest_index(&self, s: f64) -> usize {
        let k = (s / self.step()).round();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n_steps)
        }
    }

    /// Prefix grid `[0, s_k]` with the same step.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        let n = k.min(self.n_steps);
        TimeGrid::new(self.point(n), n)
    }
}

/// Real function sampled on every point of a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridFunction {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MfgError::Domain(format!(
                "grid function has {} values for {} grid points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(MfgError::Domain(format!(
                "non-finite value {} at grid index {k}",
                values[k]
            )));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.points().map(f).collect();
        GridFunction::new(grid, values)
    }

    pub fn constant(grid: TimeGrid, c: f64) -> Result<Self> {
        GridFunction::new(grid, vec![c; grid.len()])
    }

    /// Skips the finiteness scan; callers guarantee the length.
    pub(crate) fn from_parts(grid: TimeGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        GridFunction { grid, values }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction::from_parts(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> GridFunction {
        debug_assert_eq!(self.len(), other.len());
        GridFunction::from_parts(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// `sup_k |self_k - other_k|`.
    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Restriction to the first `k + 1` grid points.
    pub fn truncate(&self, k: usize) -> Result<GridFunction> {
        let grid = self.grid.truncate(k)?;
        Ok(GridFunction::from_parts(
            grid,
            self.values[..grid.len()].to_vec(),
        ))
    }

    /// Linear interpolation at `s`, clamped to the grid ends.
    pub fn interpolate(&self, s: f64) -> f64 {
        let h = self.grid.step();
        if s <= 0.0 {
            return self.values[0];
        }
        if s >= self.grid.t_end() {
            return self.last();
        }
        let pos = s / h;
        let k = (pos.floor() as usize).min(self.grid.n_steps() - 1);
        let w = pos - k as f64;
        (1.0 - w) * self.values[k] + w * self.values[k + 1]
    }

    /// Composite trapezoid rule over the whole grid.
    pub fn trapezoid(&self) -> f64 {
        let h = self.grid.step();
        let n = self.values.len();
        let inner: f64 = self.values[1..n - 1].iter().sum();
        h * (0.5 * (self.values[0] + self.values[n - 1]) + inner)
    }
}

/// Law of the initial capacity. Only its mean enters the equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum InitialDistribution {
    PointMass(f64),
    /// Lognormal with the given mean and log-volatility `v`.
    LogNormal { mean: f64, v: f64 },
    Uniform { a: f64, b: f64 },
}

impl InitialDistribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            InitialDistribution::PointMass(x) => x.is_finite() && x > 0.0,
            InitialDistribution::LogNormal { mean, v } => {
                mean.is_finite() && mean > 0.0 && v.is_finite() && v >= 0.0
            }
            InitialDistribution::Uniform { a, b } => a.is_finite() && b.is_finite() && 0.0 < a && a < b,
        };
        if ok {
            Ok(())
        } else {
            Err(MfgError::Domain(format!(
                "initial distribution {self:?} must be supported on (0, inf) with finite positive mean"
            )))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            InitialDistribution::PointMass(x) => x,
            InitialDistribution::LogNormal { mean, .. } => mean,
            InitialDistribution::Uniform { a, b } => 0.5 * (a + b),
        }
    }

    pub fn std_dev(&self) -> f64 {
        match *self {
            InitialDistribution::PointMass(_) => 0.0,
            InitialDistribution::LogNormal { mean, v } => mean * (v * v).exp_m1().sqrt(),
            InitialDistribution::Uniform { a, b } => (b - a) / 12f64.sqrt(),
        }
    }

    /// Draws one sample. Callers validate the distribution first.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            InitialDistribution::PointMass(x) => x,
            InitialDistribution::LogNormal { mean, v } => {
                if v == 0.0 {
                    return mean;
                }
                let mu = mean.ln() - 0.5 * v * v;
                LogNormal::new(mu, v)
                    .expect("validated lognormal parameters")
                    .sample(rng)
            }
            InitialDistribution::Uniform { a, b } => rng.random_range(a..b),
        }
    }
}

/// Tolerances and knobs for both solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Stopping threshold on `sup|q - Phi(q)| / (1 + sup q)`.
    pub tol_fixed_point: f64,
    pub max_iterations: usize,
    /// Initial Picard relaxation `theta` in `q <- (1 - theta) q + theta Phi(q)`.
    pub damping: f64,
    /// Relative width of the slope bracket at which bisection stops.
    pub tol_shoot_zeta: f64,
    /// Target for `|q(s_max_extended) - y_inf|`; reported, see [`crate::infinite::ShootReport`].
    pub tol_steady: f64,
    pub rng_seed: u64,
    /// Time step of the infinite-horizon integration.
    pub infinite_step: f64,
    /// Length added past `s_max` for the infinite-horizon integration.
    pub extension: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_fixed_point: 1e-10,
            max_iterations: 1000,
            damping: 0.5,
            tol_shoot_zeta: 1e-13,
            tol_steady: 1e-6,
            rng_seed: 0x5EED_2024,
            infinite_step: 0.05,
            extension: 100.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tol_fixed_point", self.tol_fixed_point),
            ("tol_shoot_zeta", self.tol_shoot_zeta),
            ("tol_steady", self.tol_steady),
            ("infinite_step", self.infinite_step),
            ("extension", self.extension),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(MfgError::InvalidParameter(format!("{name} = {v}")));
            }
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(MfgError::InvalidParameter(format!(
                "damping = {} (must lie in (0, 1])",
                self.damping
            )));
        }
        if self.max_iterations == 0 {
            return Err(MfgError::InvalidParameter("max_iterations = 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum HorizonMode {
    Finite,
    Infinite { s_max: f64, s_max_extended: f64 },
}

/// Equilibrium average capacity, investment and diagnostics on the output window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumSolution {
    pub q_hat: GridFunction,
    pub u_hat: GridFunction,
    /// `z_s = e^{delta s} q_hat_s`.
    pub z: GridFunction,
    pub value_at_mean: f64,
    pub residual_sup: f64,
    pub iterations_or_bisections: usize,
    pub horizon_mode: HorizonMode,
    /// Infinite horizon only: `q_hat` on `[0, s_max_extended]`.
    pub q_extended: Option<GridFunction>,
}

pub(crate) fn z_from_q(params: &ModelParams, q: &GridFunction) -> GridFunction {
    let grid = *q.grid();
    GridFunction::from_parts(
        grid,
        q.values()
            .iter()
            .enumerate()
            .map(|(k, &v)| (params.delta * grid.point(k)).exp() * v)
            .collect(),
    )
}

/// Long-run equilibrium capacity `y_inf = (delta (rho + delta))^{-1/(beta+1)}`,
/// the positive root of `(rho + delta) delta y = y^-beta`.
pub fn steady_state(params: &ModelParams) -> Result<f64> {
    params.validate()?;
    let cost = params.delta * (params.rho + params.delta);
    Ok(cost.powf(-1.0 / (params.beta + 1.0)))
}

/// `(rho + delta) delta y - y^-beta`.
pub fn steady_state_residual(params: &ModelParams, y: f64) -> f64 {
    (params.rho + params.delta) * params.delta * y - y.powf(-params.beta)
}
