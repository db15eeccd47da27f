//! Finite-horizon equilibrium by damped Picard iteration of
//!
//! ```text
//! Phi(q)_s = e^{-delta s} x + int_0^s e^{-delta (s-r)} u_r dr,
//! u_r      = int_r^T e^{-(rho+delta)(v-r)} q_v^-beta dv.
//! ```
//!
//! `Phi` is antitone, so the plain iteration `q <- Phi(q)` oscillates. The
//! relaxed update `q <- (1 - theta) q + theta Phi(q)` converges when `theta` is
//! small enough relative to the largest eigenvalue of the linearisation; the
//! solver halves `theta` and restarts from the best iterate whenever the
//! residual grows.

use serde::Serialize;

use crate::bounds::apriori_bounds_finite;
use crate::error::{MfgError, Result};
use crate::kernel::{cumulative_backward_kernel, cumulative_forward_kernel};
use crate::model::{
    z_from_q, EquilibriumSolution, GridFunction, HorizonMode, InitialDistribution, ModelParams,
    SolverConfig, TimeGrid,
};

/// Smallest relaxation the backtracking may reach before giving up on halving.
const MIN_DAMPING: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointReport {
    pub iterations: usize,
    /// `sup|Phi(q) - q| / (1 + sup q)` per iteration.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// Grid values projected into the a priori band, summed over all iterations.
    pub clamp_events: usize,
    /// Projections performed while building the returned iterate.
    pub last_clamp_events: usize,
    pub final_damping: f64,
    /// Number of times the relaxation was halved.
    pub backtracks: usize,
}

fn check_positive(q: &GridFunction) -> Result<()> {
    match q.values().iter().position(|&v| !(v > 0.0)) {
        None => Ok(()),
        Some(k) => Err(MfgError::Domain(format!(
            "capacity path must be positive, found {} at s = {}",
            q.values()[k],
            q.grid().point(k)
        ))),
    }
}

/// `s -> int_s^T e^{-(rho+delta)(r-s)} q_r^-beta dr`, the optimal investment
/// against the average path `q`. Vanishes at `T`.
pub fn optimal_control_finite(params: &ModelParams, q: &GridFunction) -> Result<GridFunction> {
    check_positive(q)?;
    let price = q.map(|v| v.powf(-params.beta));
    Ok(cumulative_backward_kernel(&price, params.rho + params.delta))
}

/// Mean capacity `e^{-delta s} x + int_0^s e^{-delta(s-r)} u_r dr` under a deterministic control.
pub fn mean_capacity(params: &ModelParams, x: f64, u: &GridFunction) -> GridFunction {
    let grid = *u.grid();
    let drift = cumulative_forward_kernel(u, params.delta);
    let values = drift
        .values()
        .iter()
        .enumerate()
        .map(|(k, d)| (-params.delta * grid.point(k)).exp() * x + d)
        .collect();
    GridFunction::from_parts(grid, values)
}

/// One application of the equilibrium map. `Phi(q)_0 = x` exactly.
pub fn phi_apply(params: &ModelParams, x: f64, q: &GridFunction) -> Result<GridFunction> {
    let u = optimal_control_finite(params, q)?;
    Ok(mean_capacity(params, x, &u))
}

/// `sup_k |q_k - Phi(q)_k|`.
pub fn residual_integral_equation(params: &ModelParams, x: f64, q: &GridFunction) -> Result<f64> {
    Ok(phi_apply(params, x, q)?.sup_distance(q))
}

/// Expected discounted profit of the control `u` against the average path `q`
/// for an agent with mean initial capacity `x_mean`:
/// `x_mean z_0 + int_0^T e^{-rho s} (z_s u_s - u_s^2 / 2) ds` with `z` the optimal control.
pub fn expected_profit(
    params: &ModelParams,
    q: &GridFunction,
    u: &GridFunction,
    x_mean: f64,
) -> Result<f64> {
    let z = optimal_control_finite(params, q)?;
    let grid = *q.grid();
    let integrand = GridFunction::from_parts(
        grid,
        (0..grid.len())
            .map(|k| {
                let (zk, uk) = (z.values()[k], u.values()[k]);
                (-params.rho * grid.point(k)).exp() * (zk * uk - 0.5 * uk * uk)
            })
            .collect(),
    );
    Ok(x_mean * z.first() + integrand.trapezoid())
}

/// Optimal value `x_mean z_0 + 1/2 int_0^T e^{-rho s} z_s^2 ds`.
pub fn value_function_finite(params: &ModelParams, q: &GridFunction, x_mean: f64) -> Result<f64> {
    let z = optimal_control_finite(params, q)?;
    Ok(value_from_control(params, &z, x_mean))
}

pub(crate) fn value_from_control(params: &ModelParams, z: &GridFunction, x_mean: f64) -> f64 {
    let grid = *z.grid();
    let quad = GridFunction::from_parts(
        grid,
        z.values()
            .iter()
            .enumerate()
            .map(|(k, v)| (-params.rho * grid.point(k)).exp() * v * v)
            .collect(),
    );
    x_mean * z.first() + 0.5 * quad.trapezoid()
}

fn scaled_residual(q: &GridFunction, phi: &GridFunction) -> f64 {
    let sup_q = q.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    phi.sup_distance(q) / (1.0 + sup_q)
}

/// Damped Picard iteration from `start`, projecting every iterate into the
/// y-space band `[lower, upper]`.
pub fn picard_fixed_point(
    params: &ModelParams,
    x: f64,
    lower: &GridFunction,
    upper: &GridFunction,
    start: &GridFunction,
    cfg: &SolverConfig,
) -> Result<(GridFunction, FixedPointReport)> {
    cfg.validate()?;
    let mut theta = cfg.damping;
    let mut report = FixedPointReport {
        iterations: 0,
        residual_history: Vec::new(),
        converged: false,
        clamp_events: 0,
        last_clamp_events: 0,
        final_damping: theta,
        backtracks: 0,
    };
    let mut q = start.clone();
    let mut best: Option<(f64, GridFunction, GridFunction)> = None;

    for it in 1..=cfg.max_iterations {
        report.iterations = it;
        let phi = phi_apply(params, x, &q)?;
        let r = scaled_residual(&q, &phi);
        report.residual_history.push(r);
        if !r.is_finite() {
            break;
        }
        if r < cfg.tol_fixed_point {
            report.converged = true;
            report.final_damping = theta;
            return Ok((q, report));
        }

        let (base, base_phi) = match &best {
            Some((best_r, best_q, best_phi)) if r > *best_r => {
                // growth: the relaxation is too aggressive for the current spectrum
                if theta > MIN_DAMPING {
                    theta *= 0.5;
                    report.backtracks += 1;
                }
                (best_q.clone(), best_phi.clone())
            }
            _ => {
                best = Some((r, q.clone(), phi.clone()));
                (q, phi)
            }
        };

        let mut clamps = 0;
        let values = base
            .values()
            .iter()
            .zip(base_phi.values())
            .zip(lower.values().iter().zip(upper.values()))
            .map(|((&qk, &pk), (&lo, &hi))| {
                let v = (1.0 - theta) * qk + theta * pk;
                if v < lo {
                    clamps += 1;
                    lo
                } else if v > hi {
                    clamps += 1;
                    hi
                } else {
                    v
                }
            })
            .collect();
        report.clamp_events += clamps;
        report.last_clamp_events = clamps;
        q = GridFunction::from_parts(*base.grid(), values);
    }
    report.final_damping = theta;
    Err(MfgError::Convergence(Box::new(report)))
}

fn equilibrium_from_path(
    params: &ModelParams,
    x: f64,
    q: GridFunction,
    count: usize,
) -> Result<EquilibriumSolution> {
    let u = optimal_control_finite(params, &q)?;
    let residual = mean_capacity(params, x, &u).sup_distance(&q);
    Ok(EquilibriumSolution {
        z: z_from_q(params, &q),
        value_at_mean: value_from_control(params, &u, x),
        q_hat: q,
        u_hat: u,
        residual_sup: residual,
        iterations_or_bisections: count,
        horizon_mode: HorizonMode::Finite,
        q_extended: None,
    })
}

/// Equilibrium on `[0, grid.t_end()]` started from the lower band `e^{-delta s} x`.
pub fn solve_equilibrium_finite(
    params: &ModelParams,
    init: &InitialDistribution,
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<(EquilibriumSolution, FixedPointReport)> {
    init.validate()?;
    solve_equilibrium_finite_at_mean(params, init.mean(), grid, cfg)
}

/// As [`solve_equilibrium_finite`] with the initial mean given directly.
pub fn solve_equilibrium_finite_at_mean(
    params: &ModelParams,
    x: f64,
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<(EquilibriumSolution, FixedPointReport)> {
    let band = apriori_bounds_finite(params, x, grid)?;
    let (q, report) =
        picard_fixed_point(params, x, &band.y_lower, &band.y_upper, &band.y_lower, cfg)?;
    let sol = equilibrium_from_path(params, x, q, report.iterations)?;
    Ok((sol, report))
}
