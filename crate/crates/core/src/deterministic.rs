//! Noiseless model: agents follow `dX = (u - delta X) ds` from an initial
//! density `m0`, whose transport solves the continuity equation
//!
//! ```text
//! p(s, x) = e^{delta s} m0(e^{delta s} x - D_s),   D_s = int_0^s e^{delta r} u_r dr.
//! ```
//!
//! The flow is affine in the starting point, so the mean is
//! `e^{-delta s} (mean_0 + D_s)` and the equilibrium coincides with the
//! stochastic one at the same initial mean.

use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::finite::{mean_capacity, solve_equilibrium_finite_at_mean, FixedPointReport};
use crate::infinite::{shoot_equilibrium_infinite_at_mean, ShootReport};
use crate::model::{EquilibriumSolution, GridFunction, ModelParams, SolverConfig, TimeGrid};

/// Normalisation tolerance for tabulated densities.
const TABLE_MASS_TOL: f64 = 1e-6;
/// Points of the default capacity grid.
pub const DEFAULT_X_POINTS: usize = 8001;
/// Log-volatilities covered on each side of a lognormal law.
const LOGNORMAL_SPAN: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum InitialDensity {
    /// Lognormal with the given mean and log-volatility `v > 0`.
    LogNormal { mean: f64, v: f64 },
    Uniform { a: f64, b: f64 },
    /// Piecewise linear between the nodes, zero outside them.
    Tabulated { x_grid: Vec<f64>, values: Vec<f64> },
}

fn trapezoid_xy(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

fn check_increasing(x: &[f64]) -> Result<()> {
    if x.len() < 2 || x.iter().any(|v| !v.is_finite()) || x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MfgError::Domain(
            "capacity grid must hold at least two finite, strictly increasing points".into(),
        ));
    }
    Ok(())
}

impl InitialDensity {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            InitialDensity::LogNormal { mean, v } => {
                mean.is_finite() && *mean > 0.0 && v.is_finite() && *v > 0.0
            }
            InitialDensity::Uniform { a, b } => a.is_finite() && b.is_finite() && 0.0 < *a && a < b,
            InitialDensity::Tabulated { x_grid, values } => {
                check_increasing(x_grid)?;
                if x_grid.len() != values.len() {
                    return Err(MfgError::Domain("density table lengths differ".into()));
                }
                if x_grid[0] < 0.0 || values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(MfgError::Domain(
                        "tabulated density must be nonnegative and supported on [0, inf)".into(),
                    ));
                }
                let mass = trapezoid_xy(x_grid, values);
                if (mass - 1.0).abs() > TABLE_MASS_TOL {
                    return Err(MfgError::Domain(format!("tabulated density has mass {mass}")));
                }
                self.first_moment() > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(MfgError::Domain(format!("invalid initial density {self:?}")))
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            InitialDensity::LogNormal { mean, v } => {
                if x <= 0.0 {
                    return 0.0;
                }
                let mu = mean.ln() - 0.5 * v * v;
                let z = (x.ln() - mu) / v;
                (-0.5 * z * z).exp() / (x * v * (2.0 * std::f64::consts::PI).sqrt())
            }
            InitialDensity::Uniform { a, b } => {
                if (*a..=*b).contains(&x) {
                    1.0 / (b - a)
                } else {
                    0.0
                }
            }
            InitialDensity::Tabulated { x_grid, values } => {
                let n = x_grid.len();
                if x < x_grid[0] || x > x_grid[n - 1] {
                    return 0.0;
                }
                let k = x_grid.partition_point(|&g| g <= x).clamp(1, n - 1) - 1;
                let w = (x - x_grid[k]) / (x_grid[k + 1] - x_grid[k]);
                (1.0 - w) * values[k] + w * values[k + 1]
            }
        }
    }

    pub fn first_moment(&self) -> f64 {
        match self {
            InitialDensity::LogNormal { mean, .. } => *mean,
            InitialDensity::Uniform { a, b } => 0.5 * (a + b),
            InitialDensity::Tabulated { x_grid, values } => {
                let xy: Vec<f64> = x_grid.iter().zip(values).map(|(x, v)| x * v).collect();
                trapezoid_xy(x_grid, &xy)
            }
        }
    }

    pub fn std_dev(&self) -> f64 {
        match self {
            InitialDensity::LogNormal { mean, v } => mean * (v * v).exp_m1().sqrt(),
            InitialDensity::Uniform { a, b } => (b - a) / 12f64.sqrt(),
            InitialDensity::Tabulated { x_grid, values } => {
                let m = self.first_moment();
                let sq: Vec<f64> = x_grid.iter().zip(values).map(|(x, v)| (x - m).powi(2) * v).collect();
                trapezoid_xy(x_grid, &sq).max(0.0).sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensitySnapshot {
    pub x_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub time: f64,
}

impl DensitySnapshot {
    /// Trapezoid integral of the density over the grid.
    pub fn mass(&self) -> f64 {
        trapezoid_xy(&self.x_grid, &self.values)
    }

    /// Trapezoid first moment over the grid.
    pub fn mean(&self) -> f64 {
        let xy: Vec<f64> = self.x_grid.iter().zip(&self.values).map(|(x, v)| x * v).collect();
        trapezoid_xy(&self.x_grid, &xy)
    }
}

/// `D_s = int_0^s e^{delta r} u_r dr` by the trapezoid rule on the grid of `u`,
/// with `u` interpolated linearly inside the last partial step.
pub fn cumulative_drift(params: &ModelParams, u: &GridFunction, s: f64) -> Result<f64> {
    let grid = u.grid();
    if !(0.0..=grid.t_end() * (1.0 + 1e-12)).contains(&s) {
        return Err(MfgError::Domain(format!(
            "time {s} outside the control grid [0, {}]",
            grid.t_end()
        )));
    }
    if let Some(k) = u.values().iter().position(|&v| v < 0.0) {
        return Err(MfgError::Domain(format!("control is negative at index {k}")));
    }
    let s = s.min(grid.t_end());
    let h = grid.step();
    let g = |k: usize| (params.delta * grid.point(k)).exp() * u.values()[k];
    let full = ((s / h).floor() as usize).min(grid.n_steps());
    let mut d = 0.0;
    for k in 0..full {
        d += 0.5 * h * (g(k) + g(k + 1));
    }
    let rest = s - grid.point(full);
    if rest > 0.0 && full < grid.n_steps() {
        let end = (params.delta * s).exp() * u.interpolate(s);
        d += 0.5 * rest * (g(full) + end);
    }
    Ok(d)
}

/// Density of the population at time `s` on `x_grid`.
pub fn pushforward_density(
    params: &ModelParams,
    m0: &InitialDensity,
    u: &GridFunction,
    s: f64,
    x_grid: &[f64],
) -> Result<DensitySnapshot> {
    check_increasing(x_grid)?;
    m0.validate()?;
    let d = cumulative_drift(params, u, s)?;
    let growth = (params.delta * s).exp();
    Ok(DensitySnapshot {
        x_grid: x_grid.to_vec(),
        values: x_grid.iter().map(|&x| growth * m0.pdf(growth * x - d)).collect(),
        time: s,
    })
}

/// `e^{-delta s} mean_0 + int_0^s e^{-delta(s-r)} u_r dr` in closed form.
pub fn density_mean(params: &ModelParams, m0: &InitialDensity, u: &GridFunction, s: f64) -> Result<f64> {
    let d = cumulative_drift(params, u, s)?;
    Ok((-params.delta * s).exp() * (m0.first_moment() + d))
}

/// Capacity grid carrying the transported density at time `s`. The nodes are
/// images under the flow of nodes in the initial variable: log-spaced over
/// `mu +- 8 v` for lognormal laws, uniform over the support otherwise, so
/// uniform laws integrate exactly.
pub fn default_x_grid(params: &ModelParams, m0: &InitialDensity, u: &GridFunction, s: f64) -> Result<Vec<f64>> {
    m0.validate()?;
    let d = cumulative_drift(params, u, s)?;
    let shrink = (-params.delta * s).exp();
    let n = DEFAULT_X_POINTS - 1;
    let nodes: Vec<f64> = match m0 {
        InitialDensity::LogNormal { mean, v } => {
            let mu = mean.ln() - 0.5 * v * v;
            let (lo, hi) = (mu - LOGNORMAL_SPAN * v, mu + LOGNORMAL_SPAN * v);
            (0..=n).map(|i| (lo + (hi - lo) * i as f64 / n as f64).exp()).collect()
        }
        InitialDensity::Uniform { a, b } => support_nodes(*a, *b, n),
        InitialDensity::Tabulated { x_grid, .. } => support_nodes(x_grid[0], x_grid[x_grid.len() - 1], n),
    };
    Ok(nodes.into_iter().map(|y| shrink * (y + d)).collect())
}

/// `n + 1` uniform nodes on `[a, b]`, pulled inside by a relative `1e-9` so
/// that rounding in the flow map cannot push an endpoint off the support.
fn support_nodes(a: f64, b: f64, n: usize) -> Vec<f64> {
    let inset = 1e-9 * (b - a);
    let (a, b) = (a + inset, b - inset);
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}

/// Path of a single agent started at `x` under the control `u`.
pub fn deterministic_trajectory(params: &ModelParams, x: f64, u: &GridFunction) -> GridFunction {
    mean_capacity(params, x, u)
}

/// Finite-horizon equilibrium of the noiseless game.
pub fn solve_deterministic_equilibrium(
    params: &ModelParams,
    m0: &InitialDensity,
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<(EquilibriumSolution, FixedPointReport)> {
    m0.validate()?;
    solve_equilibrium_finite_at_mean(params, m0.first_moment(), grid, cfg)
}

/// Infinite-horizon equilibrium of the noiseless game.
pub fn solve_deterministic_equilibrium_infinite(
    params: &ModelParams,
    m0: &InitialDensity,
    s_max: f64,
    cfg: &SolverConfig,
) -> Result<(EquilibriumSolution, ShootReport)> {
    m0.validate()?;
    shoot_equilibrium_infinite_at_mean(params, m0.first_moment(), s_max, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite::solve_equilibrium_finite_at_mean;

    fn reference_params() -> ModelParams {
        ModelParams::reference(0.0)
    }

    fn equilibrium() -> EquilibriumSolution {
        solve_equilibrium_finite_at_mean(&reference_params(), 10.0, &TimeGrid::new(30.0, 600).unwrap(), &SolverConfig::default())
            .unwrap()
            .0
    }

    #[test]
    fn zero_control_is_a_dilation() {
        let p = reference_params();
        let m0 = InitialDensity::LogNormal { mean: 10.0, v: 0.3 };
        let g = TimeGrid::new(30.0, 300).unwrap();
        let u = GridFunction::constant(g, 0.0).unwrap();
        let s = 20.0;
        let xs: Vec<f64> = (0..=6000).map(|i| i as f64 * 0.01).collect();
        let snap = pushforward_density(&p, &m0, &u, s, &xs).unwrap();
        let e = (p.delta * s).exp();
        for (x, v) in xs.iter().zip(&snap.values) {
            assert!((v - e * m0.pdf(e * x)).abs() < 1e-15);
        }
        assert!((density_mean(&p, &m0, &u, s).unwrap() - 10.0 / e).abs() < 1e-12);
        assert!((snap.mean() - 10.0 / e).abs() < 1e-6, "{}", snap.mean() - 10.0 / e);
    }

    #[test]
    fn time_zero_is_the_initial_density() {
        let m0 = InitialDensity::Uniform { a: 5.0, b: 15.0 };
        let u = equilibrium().u_hat;
        let xs: Vec<f64> = (0..=200).map(|i| i as f64 * 0.1).collect();
        let snap = pushforward_density(&reference_params(), &m0, &u, 0.0, &xs).unwrap();
        assert!(xs.iter().zip(&snap.values).all(|(x, v)| *v == m0.pdf(*x)));
    }

    #[test]
    fn snapshot_mass_and_mean() {
        let p = reference_params();
        let m0 = InitialDensity::LogNormal { mean: 10.0, v: 0.3 };
        let u = equilibrium().u_hat;
        let xs = default_x_grid(&p, &m0, &u, 10.0).unwrap();
        let snap = pushforward_density(&p, &m0, &u, 10.0, &xs).unwrap();
        assert!((snap.mass() - 1.0).abs() < 1e-4, "{}", snap.mass());
        let closed = density_mean(&p, &m0, &u, 10.0).unwrap();
        assert!((snap.mean() - closed).abs() < 1e-5, "{} vs {closed}", snap.mean());
    }

    #[test]
    fn default_grid_carries_the_mass() {
        let p = reference_params();
        let u = equilibrium().u_hat;
        for m0 in [
            InitialDensity::LogNormal { mean: 8.0, v: 0.8 },
            InitialDensity::Uniform { a: 5.0, b: 15.0 },
        ] {
            for s in [0.0, 12.5, 30.0] {
                let xs = default_x_grid(&p, &m0, &u, s).unwrap();
                let snap = pushforward_density(&p, &m0, &u, s, &xs).unwrap();
                assert!((snap.mass() - 1.0).abs() < 1e-5, "{m0:?} s={s}: {}", snap.mass());
                let closed = density_mean(&p, &m0, &u, s).unwrap();
                assert!((snap.mean() - closed).abs() < 1e-5 * closed);
            }
        }
    }

    #[test]
    fn mean_matches_equilibrium_path() {
        let sol = equilibrium();
        let m0 = InitialDensity::LogNormal { mean: 10.0, v: 0.5 };
        for (k, s) in sol.q_hat.grid().points().enumerate().step_by(50) {
            let m = density_mean(&reference_params(), &m0, &sol.u_hat, s).unwrap();
            assert!((m - sol.q_hat.values()[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn individual_path_differs_from_population_mean() {
        let sol = equilibrium();
        let m0 = InitialDensity::Uniform { a: 5.0, b: 25.0 };
        let solo = deterministic_trajectory(&reference_params(), 10.0, &sol.u_hat);
        let s = 15.0;
        let k = sol.q_hat.grid().nearest_index(s);
        let pop = density_mean(&reference_params(), &m0, &sol.u_hat, s).unwrap();
        assert!((solo.values()[k] - pop).abs() > 1.0);
    }

    #[test]
    fn equal_first_moments_equal_equilibria() {
        let g = TimeGrid::new(30.0, 600).unwrap();
        let cfg = SolverConfig::default();
        let a = solve_deterministic_equilibrium(&reference_params(), &InitialDensity::Uniform { a: 9.5, b: 10.5 }, &g, &cfg).unwrap().0;
        let b = solve_deterministic_equilibrium(&reference_params(), &InitialDensity::Uniform { a: 5.0, b: 15.0 }, &g, &cfg).unwrap().0;
        let c = solve_deterministic_equilibrium(&reference_params(), &InitialDensity::LogNormal { mean: 10.0, v: 0.3 }, &g, &cfg).unwrap().0;
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a, equilibrium());
    }

    #[test]
    fn tabulated_density() {
        let xs: Vec<f64> = (0..=100).map(|i| i as f64 * 0.2).collect();
        // triangle on [0, 20] peaking at 10
        let vals: Vec<f64> = xs.iter().map(|x| (10.0 - (x - 10.0).abs()) / 100.0).collect();
        let m0 = InitialDensity::Tabulated { x_grid: xs.clone(), values: vals };
        m0.validate().unwrap();
        assert!((m0.first_moment() - 10.0).abs() < 1e-12);
        assert!((m0.pdf(10.1) - 0.099).abs() < 1e-12);
        assert_eq!(m0.pdf(25.0), 0.0);
        let bad = InitialDensity::Tabulated { x_grid: xs.clone(), values: vec![0.1; xs.len()] };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unordered_capacity_grid_rejected() {
        let u = equilibrium().u_hat;
        let m0 = InitialDensity::LogNormal { mean: 10.0, v: 0.3 };
        assert!(matches!(
            pushforward_density(&reference_params(), &m0, &u, 1.0, &[1.0, 3.0, 2.0]),
            Err(MfgError::Domain(_))
        ));
    }

    #[test]
    fn partial_step_drift() {
        let p = reference_params();
        let g = TimeGrid::new(10.0, 10).unwrap();
        let u = GridFunction::constant(g, 1.0).unwrap();
        let d = cumulative_drift(&p, &u, 2.5).unwrap();
        let f = |r: f64| (p.delta * r).exp();
        let trap = 0.5 * (f(0.0) + f(1.0)) + 0.5 * (f(1.0) + f(2.0)) + 0.25 * (f(2.0) + f(2.5));
        assert!((d - trap).abs() < 1e-14);
        let exact = ((p.delta * 2.5).exp() - 1.0) / p.delta;
        assert!((d - exact).abs() < 1e-4);
    }
}
