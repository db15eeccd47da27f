//! Infinite-horizon equilibrium by shooting.
//!
//! Differentiating the integral equation twice gives the autonomous ODE
//!
//! ```text
//! y'' = rho y' + (rho + delta) delta y - y^-beta,   y_0 = x,   y'_0 = zeta - delta x,
//! ```
//!
//! where `zeta = u_0` is the unknown initial investment. The equilibrium is the
//! unique trajectory that converges monotonically to `y_inf`; every other slope
//! leaves the corridor between `x` and `y_inf`, upward when `zeta` is too large
//! and downward when it is too small. Bisection on that dichotomy recovers the
//! slope. `y_inf` is a saddle with rates `lambda_- < 0 < lambda_+`, so a slope
//! error is amplified by about `e^{lambda_+ s}`: when the integration window is
//! too long for double precision it is split into segments, each restarted from
//! the state reached halfway through the previous one.

use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::kernel::{
    backward_kernel_corrected, corrected_trapezoid, derivative, forward_kernel_corrected,
};
use crate::model::{
    steady_state, z_from_q, EquilibriumSolution, GridFunction, HorizonMode, InitialDistribution,
    ModelParams, SolverConfig, TimeGrid,
};

/// Corridor half-width used while bisecting.
pub const EPS_BISECTION: f64 = 1e-6;
/// Corridor half-width for the final accepted trajectory.
pub const EPS_ACCEPT: f64 = 1e-3;
/// Largest `lambda_+ * length` of one shooting segment.
const MAX_GROWTH_EXPONENT: f64 = 20.0;
/// Relative distance to `y_inf` below which the start counts as stationary.
const STATIONARY_REL: f64 = 1e-12;
/// Relative distance to `y_inf` below which the remaining path follows the
/// stable mode of the linearisation; its error is of order the square.
const LINEAR_TAIL_REL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Classification {
    TooHigh,
    TooLow,
    Accepted,
}

/// Result of one trial integration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShootOutcome {
    pub classification: Classification,
    /// Time at which the trajectory left the corridor.
    pub exit_time: Option<f64>,
    /// `y` at the grid points up to the exit (inclusive) or to the end of the grid.
    pub trajectory: Vec<f64>,
    /// `y'` at the same points.
    pub slopes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShootReport {
    /// Initial investment `u_0` of the equilibrium.
    pub zeta_star: f64,
    /// `(lo, hi)` after every bisection step of the first segment.
    pub bracket_history: Vec<(f64, f64)>,
    pub bisections: usize,
    /// `|y(s_max_extended) - y_inf|`.
    pub terminal_gap: f64,
    /// Whether `terminal_gap < tol_steady`.
    pub steady_reached: bool,
    pub segments: usize,
}

/// Saddle structure of the linearisation at `y_inf`.
#[derive(Debug, Clone, Copy)]
pub struct Linearization {
    pub y_inf: f64,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
}

impl Linearization {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let y_inf = steady_state(params)?;
        // lambda^2 - rho lambda - delta (rho + delta)(1 + beta) = 0
        let mu = params.delta * (params.rho + params.delta) * (1.0 + params.beta);
        let disc = (params.rho * params.rho + 4.0 * mu).sqrt();
        Ok(Linearization {
            y_inf,
            lambda_minus: 0.5 * (params.rho - disc),
            lambda_plus: 0.5 * (params.rho + disc),
        })
    }

    /// Coefficient of the unstable mode, up to a positive factor.
    fn unstable_component(&self, y: f64, v: f64) -> f64 {
        v - self.lambda_minus * (y - self.y_inf)
    }
}

#[derive(Debug, Clone, Copy)]
struct Corridor {
    lo: f64,
    hi: f64,
    /// +1 rising toward `y_inf`, -1 falling, 0 stationary start.
    dir: i8,
    slope_test: bool,
}

impl Corridor {
    fn new(x: f64, y_inf: f64, eps: f64, slope_test: bool) -> Self {
        let dir = if (x - y_inf).abs() <= STATIONARY_REL * y_inf {
            0
        } else if x < y_inf {
            1
        } else {
            -1
        };
        Corridor {
            lo: x.min(y_inf) * (1.0 - eps),
            hi: x.max(y_inf) * (1.0 + eps),
            dir,
            slope_test,
        }
    }

    fn classify(&self, y: f64, v: f64) -> Option<Classification> {
        if y.is_nan() || y < self.lo {
            return Some(Classification::TooLow);
        }
        if y > self.hi {
            return Some(Classification::TooHigh);
        }
        if self.slope_test {
            if self.dir > 0 && v < 0.0 {
                return Some(Classification::TooLow);
            }
            if self.dir < 0 && v > 0.0 {
                return Some(Classification::TooHigh);
            }
        }
        None
    }
}

fn acceleration(params: &ModelParams, y: f64, v: f64) -> Option<f64> {
    if y > 0.0 {
        Some(params.rho * v + (params.rho + params.delta) * params.delta * y - y.powf(-params.beta))
    } else {
        None
    }
}

/// One classic Runge-Kutta step; `None` when a stage leaves `y > 0`.
fn rk4_step(params: &ModelParams, y: f64, v: f64, h: f64) -> Option<(f64, f64)> {
    let a1 = acceleration(params, y, v)?;
    let (y2, v2) = (y + 0.5 * h * v, v + 0.5 * h * a1);
    let a2 = acceleration(params, y2, v2)?;
    let (y3, v3) = (y + 0.5 * h * v2, v + 0.5 * h * a2);
    let a3 = acceleration(params, y3, v3)?;
    let (y4, v4) = (y + h * v3, v + h * a3);
    let a4 = acceleration(params, y4, v4)?;
    Some((
        y + h / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4),
        v + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
    ))
}

fn run(
    params: &ModelParams,
    x: f64,
    zeta: f64,
    h: f64,
    n_steps: usize,
    corridor: &Corridor,
) -> ShootOutcome {
    let (mut y, mut v) = (x, zeta - params.delta * x);
    let mut ys = Vec::with_capacity(n_steps + 1);
    let mut vs = Vec::with_capacity(n_steps + 1);
    ys.push(y);
    vs.push(v);
    let exit = |k: usize, c: Classification, ys: Vec<f64>, vs: Vec<f64>| ShootOutcome {
        classification: c,
        exit_time: Some(k as f64 * h),
        trajectory: ys,
        slopes: vs,
    };
    if let Some(c) = corridor.classify(y, v) {
        return exit(0, c, ys, vs);
    }
    for k in 1..=n_steps {
        match rk4_step(params, y, v, h) {
            None => return exit(k, Classification::TooLow, ys, vs),
            Some((yn, vn)) => {
                y = yn;
                v = vn;
            }
        }
        ys.push(y);
        vs.push(v);
        if let Some(c) = corridor.classify(y, v) {
            return exit(k, c, ys, vs);
        }
    }
    ShootOutcome {
        classification: Classification::Accepted,
        exit_time: None,
        trajectory: ys,
        slopes: vs,
    }
}

/// Slope bound `K = x^-beta / (rho + delta - delta beta)`; the equilibrium has `0 < zeta <= K`.
pub fn slope_bound(params: &ModelParams, x: f64) -> f64 {
    x.powf(-params.beta) / (params.rho + params.delta - params.delta * params.beta)
}

/// Integrates the ODE with `y_0 = x`, `y'_0 = zeta - delta x` on `grid` with
/// RK4 at the grid step and classifies the trajectory against the corridor
/// `[min(x, y_inf)(1 - eps), max(x, y_inf)(1 + eps)]`, `eps = EPS_BISECTION`,
/// together with the requirement that `y'` keeps the sign of `y_inf - x`.
pub fn integrate_ivp(params: &ModelParams, x: f64, zeta: f64, grid: &TimeGrid) -> Result<ShootOutcome> {
    params.check_infinite_horizon()?;
    if !(zeta.is_finite() && zeta > 0.0) {
        return Err(MfgError::Domain(format!("initial slope zeta = {zeta} must be positive")));
    }
    if !(x.is_finite() && x > 0.0) {
        return Err(MfgError::Domain(format!("initial mean x = {x} must be positive")));
    }
    let lin = Linearization::new(params)?;
    let corridor = Corridor::new(x, lin.y_inf, EPS_BISECTION, true);
    Ok(run(params, x, zeta, grid.step(), grid.n_steps(), &corridor))
}

/// Which side of the equilibrium slope `zeta` lies on. Trajectories that stay
/// in the corridor are resolved by the sign of their unstable mode at the end.
fn side(params: &ModelParams, lin: &Linearization, x: f64, zeta: f64, h: f64, n: usize) -> Classification {
    let corridor = Corridor::new(x, lin.y_inf, EPS_BISECTION, true);
    let out = run(params, x, zeta, h, n, &corridor);
    match out.classification {
        Classification::Accepted => {
            let (y, v) = (out.trajectory[n], out.slopes[n]);
            if lin.unstable_component(y, v) < 0.0 {
                Classification::TooLow
            } else {
                Classification::TooHigh
            }
        }
        c => c,
    }
}

struct Segment {
    zeta: f64,
    trajectory: Vec<f64>,
}

fn shoot_segment(
    params: &ModelParams,
    lin: &Linearization,
    x: f64,
    h: f64,
    n: usize,
    cfg: &SolverConfig,
    report: &mut ShootReport,
) -> Result<Segment> {
    let k = slope_bound(params, x);
    let (mut lo, mut hi) = (k * 1e-12, k);
    let side_lo = side(params, lin, x, lo, h, n);
    let side_hi = side(params, lin, x, hi, h, n);
    if side_lo != Classification::TooLow || side_hi != Classification::TooHigh {
        return Err(MfgError::Shooting {
            message: format!(
                "bracket ({lo:e}, {hi:e}) classifies as ({side_lo:?}, {side_hi:?}) from x = {x}"
            ),
            report: Some(Box::new(report.clone())),
        });
    }
    while hi - lo > cfg.tol_shoot_zeta * hi {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        match side(params, lin, x, mid, h, n) {
            Classification::TooLow => lo = mid,
            _ => hi = mid,
        }
        report.bisections += 1;
        if report.segments == 0 {
            report.bracket_history.push((lo, hi));
        }
    }
    let zeta = lo + 0.5 * (hi - lo);
    let corridor = Corridor::new(x, lin.y_inf, EPS_ACCEPT, false);
    let out = run(params, x, zeta, h, n, &corridor);
    if out.classification != Classification::Accepted {
        return Err(MfgError::Shooting {
            message: format!(
                "slope {zeta:e} from x = {x} left the corridor at s = {:?} ({:?})",
                out.exit_time, out.classification
            ),
            report: Some(Box::new(report.clone())),
        });
    }
    Ok(Segment { zeta, trajectory: out.trajectory })
}

/// Output grid on `[0, s_max]` and its extension to `s_max + extension` with the same step.
pub fn extended_grids(s_max: f64, cfg: &SolverConfig) -> Result<(TimeGrid, TimeGrid)> {
    cfg.validate()?;
    let window = TimeGrid::with_step(s_max, cfg.infinite_step)?;
    let h = window.step();
    let n_ext = window.n_steps() + ((cfg.extension / h).round() as usize).max(1);
    let extended = TimeGrid::new(n_ext as f64 * h, n_ext)?;
    Ok((window, extended))
}

/// Equilibrium average path on the extended grid together with the shooting report.
pub fn shoot_path(
    params: &ModelParams,
    x: f64,
    extended: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<(GridFunction, ShootReport)> {
    params.check_infinite_horizon()?;
    if !(x.is_finite() && x > 0.0) {
        return Err(MfgError::Domain(format!("initial mean x = {x} must be positive")));
    }
    let lin = Linearization::new(params)?;
    let h = extended.step();
    let n_total = extended.n_steps();
    let seg_steps = ((MAX_GROWTH_EXPONENT / lin.lambda_plus / h).floor() as usize).max(4);

    let mut report = ShootReport {
        zeta_star: f64::NAN,
        bracket_history: Vec::new(),
        bisections: 0,
        terminal_gap: f64::NAN,
        steady_reached: false,
        segments: 0,
    };
    let mut path = Vec::with_capacity(n_total + 1);
    path.push(x);
    let mut start = x;
    while path.len() <= n_total {
        let gap = start - lin.y_inf;
        if report.segments > 0 && gap.abs() < LINEAR_TAIL_REL * lin.y_inf {
            let k0 = path.len() - 1;
            for k in k0 + 1..=n_total {
                path.push(lin.y_inf + gap * (lin.lambda_minus * (k - k0) as f64 * h).exp());
            }
            break;
        }
        let remaining = n_total + 1 - path.len();
        let last = remaining <= seg_steps / 2;
        let n = remaining.min(seg_steps);
        let seg = shoot_segment(params, &lin, start, h, n, cfg, &mut report)?;
        if report.segments == 0 {
            report.zeta_star = seg.zeta;
        }
        report.segments += 1;
        let keep = if last { n } else { n / 2 };
        path.extend_from_slice(&seg.trajectory[1..=keep]);
        start = seg.trajectory[keep];
    }
    let q = GridFunction::new(*extended, path)?;
    report.terminal_gap = (q.last() - lin.y_inf).abs();
    report.steady_reached = report.terminal_gap < cfg.tol_steady;
    Ok((q, report))
}

/// Investment `int_s^inf e^{-(rho+delta)(r-s)} q_r^-beta dr` on the whole
/// extended grid. Beyond the grid `q` follows the stable mode
/// `y_inf + g e^{lambda_minus (r - S)}`, linearised in `g`.
fn control_with_tail(params: &ModelParams, q_extended: &GridFunction) -> Result<GridFunction> {
    if let Some(k) = q_extended.values().iter().position(|&v| !(v > 0.0)) {
        return Err(MfgError::Domain(format!(
            "capacity path must be positive, found {} at index {k}",
            q_extended.values()[k]
        )));
    }
    let c = params.rho + params.delta;
    let price = q_extended.map(|v| v.powf(-params.beta));
    let d_price = derivative(&price);
    let lin = Linearization::new(params)?;
    let g = q_extended.last() - lin.y_inf;
    let p_inf = lin.y_inf.powf(-params.beta);
    let tail = p_inf / c - params.beta * p_inf / lin.y_inf * g / (c - lin.lambda_minus);
    Ok(backward_kernel_corrected(&price, &d_price, c, tail))
}

/// `u' = (rho + delta) u - q^-beta`, exact for the control built from `q`.
fn control_slope(params: &ModelParams, q: &GridFunction, u: &GridFunction) -> Vec<f64> {
    let c = params.rho + params.delta;
    q.values()
        .iter()
        .zip(u.values())
        .map(|(qv, uv)| c * uv - qv.powf(-params.beta))
        .collect()
}

fn mean_from_control(params: &ModelParams, x: f64, q: &GridFunction, u: &GridFunction) -> GridFunction {
    let du = control_slope(params, q, u);
    let drift = forward_kernel_corrected(u, &du, params.delta);
    let grid = *u.grid();
    GridFunction::from_parts(
        grid,
        drift
            .values()
            .iter()
            .enumerate()
            .map(|(k, d)| (-params.delta * grid.point(k)).exp() * x + d)
            .collect(),
    )
}

fn window_index(q_extended: &GridFunction, s_max: f64) -> Result<usize> {
    let grid = q_extended.grid();
    let k = grid.nearest_index(s_max);
    let tol = 1e-9 * s_max.max(1.0);
    if !(s_max > 0.0) || k >= grid.n_steps() || (grid.point(k) - s_max).abs() > tol {
        return Err(MfgError::Config(format!(
            "extended grid [0, {}] must extend past s_max = {s_max} and contain it as a grid point",
            grid.t_end()
        )));
    }
    Ok(k)
}

/// Optimal investment against `q_extended`, reported on `[0, s_max]`.
pub fn optimal_control_infinite(
    params: &ModelParams,
    q_extended: &GridFunction,
    s_max: f64,
) -> Result<GridFunction> {
    let k = window_index(q_extended, s_max)?;
    control_with_tail(params, q_extended)?.truncate(k)
}

/// `x_mean u_0 + 1/2 int_0^inf e^{-rho s} u_s^2 ds`, the integral beyond the
/// grid taken in closed form with `u` frozen at its last value.
pub fn value_function_infinite(params: &ModelParams, q_extended: &GridFunction, x_mean: f64) -> Result<f64> {
    let u = control_with_tail(params, q_extended)?;
    let du = control_slope(params, q_extended, &u);
    let grid = *u.grid();
    let disc: Vec<f64> = grid.points().map(|s| (-params.rho * s).exp()).collect();
    let uv = u.values();
    let quad = GridFunction::from_parts(grid, (0..grid.len()).map(|k| disc[k] * uv[k] * uv[k]).collect());
    let d_quad: Vec<f64> = (0..grid.len())
        .map(|k| disc[k] * (2.0 * uv[k] * du[k] - params.rho * uv[k] * uv[k]))
        .collect();
    let s_end = grid.t_end();
    let tail = 0.5 * u.last() * u.last() * (-params.rho * s_end).exp() / params.rho;
    Ok(x_mean * u.first() + 0.5 * corrected_trapezoid(&quad, &d_quad) + tail)
}

/// `sup_{s <= s_max} |q_s - e^{-delta s} x - int_0^s e^{-delta(s-r)} u_r dr|`.
pub fn residual_integral_equation_infinite(
    params: &ModelParams,
    x: f64,
    q_extended: &GridFunction,
    s_max: f64,
) -> Result<f64> {
    let k = window_index(q_extended, s_max)?;
    let u = control_with_tail(params, q_extended)?;
    let mean = mean_from_control(params, x, q_extended, &u);
    Ok(mean.truncate(k)?.sup_distance(&q_extended.truncate(k)?))
}

/// Infinite-horizon equilibrium reported on `[0, s_max]`; the integration runs
/// to `s_max + cfg.extension` with step `cfg.infinite_step`.
pub fn shoot_equilibrium_infinite(
    params: &ModelParams,
    init: &InitialDistribution,
    s_max: f64,
    cfg: &SolverConfig,
) -> Result<(EquilibriumSolution, ShootReport)> {
    init.validate()?;
    shoot_equilibrium_infinite_at_mean(params, init.mean(), s_max, cfg)
}

pub fn shoot_equilibrium_infinite_at_mean(
    params: &ModelParams,
    x: f64,
    s_max: f64,
    cfg: &SolverConfig,
) -> Result<(EquilibriumSolution, ShootReport)> {
    params.check_infinite_horizon()?;
    let (window, extended) = extended_grids(s_max, cfg)?;
    let (q_ext, report) = shoot_path(params, x, &extended, cfg)?;
    let k = window.n_steps();
    let u_full = control_with_tail(params, &q_ext)?;
    let residual = mean_from_control(params, x, &q_ext, &u_full)
        .truncate(k)?
        .sup_distance(&q_ext.truncate(k)?);
    let q_hat = GridFunction::new(window, q_ext.values()[..=k].to_vec())?;
    let u_hat = GridFunction::new(window, u_full.values()[..=k].to_vec())?;
    let value = value_function_infinite(params, &q_ext, x)?;
    let sol = EquilibriumSolution {
        z: z_from_q(params, &q_hat),
        q_hat,
        u_hat,
        value_at_mean: value,
        residual_sup: residual,
        iterations_or_bisections: report.bisections,
        horizon_mode: HorizonMode::Infinite {
            s_max: window.t_end(),
            s_max_extended: extended.t_end(),
        },
        q_extended: Some(q_ext),
    };
    Ok((sol, report))
}

/// Weighted distance `int_0^{s_ref} e^{-(rho+2 delta)s} |q^T_s - q^inf_s| ds`
/// between finite-horizon equilibria and the infinite-horizon one, for each
/// horizon `T`. Both solvers use the step `cfg.infinite_step`.
pub fn finite_to_infinite_convergence_probe(
    params: &ModelParams,
    x: f64,
    horizons: &[f64],
    s_ref: f64,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    params.check_infinite_horizon()?;
    let (inf, _) = shoot_equilibrium_infinite_at_mean(params, x, s_ref.max(300.0), cfg)?;
    let h = inf.q_hat.grid().step();
    let n_ref = (s_ref / h).round() as usize;
    let weight = params.rho + 2.0 * params.delta;
    horizons
        .iter()
        .map(|&t| {
            if !(t >= s_ref) {
                return Err(MfgError::InvalidParameter(format!(
                    "horizon {t} must be at least s_ref = {s_ref}"
                )));
            }
            let n = (t / h).round() as usize;
            let grid = TimeGrid::new(n as f64 * h, n)?;
            let (fin, _) = crate::finite::solve_equilibrium_finite_at_mean(params, x, &grid, cfg)?;
            let diff = GridFunction::new(
                TimeGrid::new(n_ref as f64 * h, n_ref)?,
                (0..=n_ref)
                    .map(|k| {
                        let s = k as f64 * h;
                        (-weight * s).exp() * (fin.q_hat.values()[k] - inf.q_hat.values()[k]).abs()
                    })
                    .collect(),
            )?;
            Ok(diff.trapezoid())
        })
        .collect()
}
