//! Cross-module invariant checks behind the `validate` subcommand.

use serde::Serialize;

use crate::bounds::{apriori_bounds_finite, apriori_bounds_infinite};
use crate::config::{Horizon, RunConfig};
use crate::deterministic::{default_x_grid, density_mean, pushforward_density, InitialDensity};
use crate::error::{MfgError, Result};
use crate::finite::solve_equilibrium_finite;
use crate::infinite::{finite_to_infinite_convergence_probe, shoot_equilibrium_infinite};
use crate::model::{steady_state, steady_state_residual, InitialDistribution};
use crate::stochastic::{analytic_mean, consistency_gap, simulate_paths};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
    pub note: String,
}

impl Check {
    fn at_most(name: &str, measured: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            measured,
            threshold,
            passed: measured <= threshold,
            note: String::new(),
        }
    }

    fn failed(name: &str, measured: f64, threshold: f64, note: String) -> Self {
        Check { name: name.into(), measured, threshold, passed: false, note }
    }
}

/// Runs the checks for the configured parameters. Invalid configurations,
/// including infinite horizons with `beta >= 1 + rho/delta`, are returned as
/// errors before any solve.
pub fn run_validation(cfg: &RunConfig) -> Result<Vec<Check>> {
    cfg.validate()?;
    let p = cfg.params;
    let init = cfg.initial_distribution()?;
    let x = init.mean();
    let mut checks = Vec::new();

    let y_inf = steady_state(&p)?;
    let scale = ((p.rho + p.delta) * p.delta * y_inf).max(1.0);
    checks.push(Check::at_most(
        "steady_state_residual",
        steady_state_residual(&p, y_inf).abs() / scale,
        1e-12,
    ));

    let t_end = match cfg.horizon {
        Horizon::Finite(t) => t,
        Horizon::Infinite(_) => 30.0,
    };
    let grid = cfg.finite_grid(t_end)?;
    match solve_equilibrium_finite(&p, &init, &grid, &cfg.solver) {
        Err(MfgError::Convergence(rep)) => {
            let last = rep.residual_history.last().copied().unwrap_or(f64::NAN);
            checks.push(Check::failed(
                "finite_fixed_point",
                last,
                cfg.solver.tol_fixed_point,
                format!("no convergence after {} iterations", rep.iterations),
            ));
        }
        Err(e) => return Err(e),
        Ok((sol, _)) => {
            checks.push(Check::at_most("finite_residual", sol.residual_sup, 1e-8));
            let band = apriori_bounds_finite(&p, x, &grid)?;
            let violation = band_violation(&sol.q_hat, &band.y_lower, &band.y_upper);
            checks.push(Check::at_most("finite_band", violation, 0.0));
            checks.push(Check::at_most("finite_terminal_control", sol.u_hat.last().abs(), 0.0));
            let other = InitialDistribution::LogNormal { mean: x, v: 0.5 };
            let alt = solve_equilibrium_finite(&p, &other, &grid, &cfg.solver)?.0;
            checks.push(Check::at_most("mean_only_dependence", alt.q_hat.sup_distance(&sol.q_hat), 0.0));

            let ens = simulate_paths(&p, &sol.u_hat, &init, cfg.paths, cfg.solver.rng_seed, 0)?;
            let target = analytic_mean(&p, &sol.u_hat, x)?;
            checks.push(Check::at_most("mc_consistency_gap", consistency_gap(&ens, &target), 4.0));

            let m0 = InitialDensity::LogNormal { mean: x, v: 0.3 };
            let s = 0.5 * t_end;
            let xs = default_x_grid(&p, &m0, &sol.u_hat, s)?;
            let snap = pushforward_density(&p, &m0, &sol.u_hat, s, &xs)?;
            checks.push(Check::at_most("density_mass", (snap.mass() - 1.0).abs(), 1e-4));
            let closed = density_mean(&p, &m0, &sol.u_hat, s)?;
            checks.push(Check::at_most("density_mean", (snap.mean() - closed).abs(), 1e-5));
        }
    }

    if p.check_infinite_horizon().is_ok() {
        let s_max = match cfg.horizon {
            Horizon::Infinite(s) => s,
            Horizon::Finite(_) => 300.0,
        };
        let solver = cfg.infinite_solver(s_max);
        match shoot_equilibrium_infinite(&p, &init, s_max, &solver) {
            Err(e @ MfgError::Shooting { .. }) => {
                checks.push(Check::failed("infinite_shooting", f64::NAN, 0.0, e.to_string()));
            }
            Err(e) => return Err(e),
            Ok((sol, rep)) => {
                let dir = if (x - y_inf).abs() <= 1e-12 * y_inf { 0.0 } else { (y_inf - x).signum() };
                let wrong = if dir == 0.0 {
                    0
                } else {
                    sol.q_hat.values().windows(2).filter(|w| (w[1] - w[0]) * dir <= 0.0).count()
                };
                checks.push(Check::at_most("infinite_monotone_violations", wrong as f64, 0.0));
                checks.push(Check::at_most("infinite_terminal_gap", rep.terminal_gap, 1e-3));
                checks.push(Check::at_most("infinite_residual", sol.residual_sup, 1e-6));
                checks.push(Check::at_most(
                    "infinite_slope_vs_control",
                    ((rep.zeta_star - sol.u_hat.first()) / rep.zeta_star).abs(),
                    1e-6,
                ));
                let band = apriori_bounds_infinite(&p, x, sol.q_hat.grid())?;
                let violation = band_violation(&sol.q_hat, &band.y_lower, &band.y_upper);
                checks.push(Check::at_most("infinite_band", violation, 1e-9));
            }
        }
        match finite_to_infinite_convergence_probe(&p, x, &[30.0, 100.0, 300.0], 30.0, &solver) {
            Err(e @ (MfgError::Convergence(_) | MfgError::Shooting { .. })) => {
                checks.push(Check::failed("finite_to_infinite_ratio", f64::NAN, 1.0, e.to_string()));
            }
            Err(e) => return Err(e),
            Ok(probe) => {
                let worst_ratio = probe.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
                checks.push(Check {
                    name: "finite_to_infinite_ratio".into(),
                    measured: worst_ratio,
                    threshold: 1.0,
                    passed: worst_ratio < 1.0,
                    note: format!("{probe:?}"),
                });
            }
        }
    }
    Ok(checks)
}

/// Largest relative excursion of `q` outside `[lower, upper]`.
fn band_violation(
    q: &crate::model::GridFunction,
    lower: &crate::model::GridFunction,
    upper: &crate::model::GridFunction,
) -> f64 {
    q.values()
        .iter()
        .zip(lower.values().iter().zip(upper.values()))
        .map(|(&v, (&lo, &hi))| ((lo - v) / lo).max((v - hi) / hi).max(0.0))
        .fold(0.0, f64::max)
}
