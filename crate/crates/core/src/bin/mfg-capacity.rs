use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mfg_capacity::bounds::{apriori_bounds_finite, apriori_bounds_infinite, AprioriBand};
use mfg_capacity::config::{Horizon, InitShape, RunConfig};
use mfg_capacity::deterministic::{
    default_x_grid, density_mean, pushforward_density, solve_deterministic_equilibrium,
    solve_deterministic_equilibrium_infinite, InitialDensity,
};
use mfg_capacity::finite::solve_equilibrium_finite;
use mfg_capacity::infinite::shoot_equilibrium_infinite;
use mfg_capacity::output::{format_f64, write_csv};
use mfg_capacity::stochastic::{consistency_gap, simulate_paths};
use mfg_capacity::validation::run_validation;
use mfg_capacity::{steady_state, steady_state_residual, EquilibriumSolution, MfgError};

const EXIT_VALIDATION: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(name = "mfg-capacity", version, about = "Mean-field equilibrium of capacity investment under isoelastic demand")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand)]
enum Command {
    /// Print the long-run capacity y_inf and its residual.
    SteadyState,
    /// Solve the equilibrium and write equilibrium.csv and summary.json.
    Solve,
    /// Simulate capacity paths under the equilibrium control for each sigma.
    Simulate,
    /// Noiseless model: equilibrium and transported densities.
    Deterministic,
    /// Run the invariant checks and print a pass/fail table.
    Validate,
}

/// Every flag mirrors a configuration key of the same name.
#[derive(Args)]
struct Flags {
    /// key = value file applied before the flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// finite:<T> or infinite:<smax>
    #[arg(long, global = true)]
    horizon: Option<String>,
    /// Mean initial capacity, or `steady`
    #[arg(long, global = true)]
    x0: Option<String>,
    #[arg(long, global = true)]
    rho: Option<String>,
    #[arg(long, global = true)]
    delta: Option<String>,
    #[arg(long, global = true)]
    beta: Option<String>,
    #[arg(long, global = true)]
    sigma: Option<String>,
    #[arg(long, global = true)]
    steps: Option<String>,
    #[arg(long, global = true)]
    paths: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    out: Option<String>,
    /// Comma-separated volatilities for `simulate`
    #[arg(long, global = true)]
    sigmas: Option<String>,
    /// point, lognormal:<v> or uniform:<halfwidth>
    #[arg(long, global = true)]
    init: Option<String>,
    #[arg(long, global = true)]
    tol: Option<String>,
    #[arg(long = "max-iterations", global = true)]
    max_iterations: Option<String>,
    #[arg(long, global = true)]
    damping: Option<String>,
    #[arg(long, global = true)]
    extension: Option<String>,
    #[arg(long = "store-paths", global = true)]
    store_paths: Option<String>,
    /// Comma-separated snapshot times for `deterministic`
    #[arg(long, global = true)]
    times: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(String, String)> {
        let all = [
            ("rho", &self.rho),
            ("delta", &self.delta),
            ("beta", &self.beta),
            ("sigma", &self.sigma),
            ("horizon", &self.horizon),
            ("x0", &self.x0),
            ("init", &self.init),
            ("steps", &self.steps),
            ("paths", &self.paths),
            ("seed", &self.seed),
            ("out", &self.out),
            ("sigmas", &self.sigmas),
            ("tol", &self.tol),
            ("max-iterations", &self.max_iterations),
            ("damping", &self.damping),
            ("extension", &self.extension),
            ("store-paths", &self.store_paths),
            ("times", &self.times),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }
}

fn exit_code(e: &MfgError) -> u8 {
    match e {
        MfgError::Convergence(_) | MfgError::Shooting { .. } => EXIT_SOLVER,
        _ => EXIT_INPUT,
    }
}

fn load_config(flags: &Flags) -> Result<RunConfig, MfgError> {
    let mut cfg = match &flags.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&flags.pairs())?;
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli.flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INPUT);
        }
    };
    let result = match cli.command {
        Command::SteadyState => cmd_steady_state(&cfg),
        Command::Solve => cmd_solve(&cfg),
        Command::Simulate => cmd_simulate(&cfg),
        Command::Deterministic => cmd_deterministic(&cfg),
        Command::Validate => cmd_validate(&cfg),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn cmd_steady_state(cfg: &RunConfig) -> Result<u8, MfgError> {
    let y = steady_state(&cfg.params)?;
    println!("y_inf={y:?} residual={:?}", steady_state_residual(&cfg.params, y));
    Ok(0)
}

#[derive(Serialize)]
struct Summary<'a> {
    horizon: &'a Horizon,
    x0: f64,
    value_at_mean: f64,
    residual_sup: f64,
    iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    zeta_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    terminal_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    steady_reached: Option<bool>,
}

#[derive(Serialize)]
struct Diagnostics<'a, R: Serialize> {
    error: String,
    report: &'a R,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), MfgError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| MfgError::Config(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, MfgError> {
    std::fs::create_dir_all(&cfg.out)?;
    Ok(&cfg.out)
}

struct Solved {
    sol: EquilibriumSolution,
    band: AprioriBand,
    zeta_star: Option<f64>,
    terminal_gap: Option<f64>,
    steady_reached: Option<bool>,
}

/// Solves for the configured horizon; solver failures leave diagnostics.json behind.
fn solve(cfg: &RunConfig, dir: &Path) -> Result<Solved, MfgError> {
    let init = cfg.initial_distribution()?;
    let diagnostics = |e: &MfgError| -> Result<(), MfgError> {
        let path = dir.join("diagnostics.json");
        match e {
            MfgError::Convergence(rep) => write_json(&path, &Diagnostics { error: e.to_string(), report: rep }),
            MfgError::Shooting { report, .. } => write_json(&path, &Diagnostics { error: e.to_string(), report }),
            _ => Ok(()),
        }
    };
    match cfg.horizon {
        Horizon::Finite(t) => {
            let grid = cfg.finite_grid(t)?;
            let (sol, _) = solve_equilibrium_finite(&cfg.params, &init, &grid, &cfg.solver).inspect_err(|e| {
                let _ = diagnostics(e);
            })?;
            let band = apriori_bounds_finite(&cfg.params, init.mean(), &grid)?;
            Ok(Solved { sol, band, zeta_star: None, terminal_gap: None, steady_reached: None })
        }
        Horizon::Infinite(s_max) => {
            let solver = cfg.infinite_solver(s_max);
            let (sol, rep) = shoot_equilibrium_infinite(&cfg.params, &init, s_max, &solver).inspect_err(|e| {
                let _ = diagnostics(e);
            })?;
            let band = apriori_bounds_infinite(&cfg.params, init.mean(), sol.q_hat.grid())?;
            Ok(Solved {
                sol,
                band,
                zeta_star: Some(rep.zeta_star),
                terminal_gap: Some(rep.terminal_gap),
                steady_reached: Some(rep.steady_reached),
            })
        }
    }
}

fn headers(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn cmd_solve(cfg: &RunConfig) -> Result<u8, MfgError> {
    let dir = out_dir(cfg)?;
    let solved = solve(cfg, dir)?;
    let sol = &solved.sol;
    let s: Vec<f64> = sol.q_hat.grid().points().collect();
    write_csv(
        &dir.join("equilibrium.csv"),
        &headers(&["s", "z", "q_hat", "u_hat", "lower_bound", "upper_bound"]),
        &[
            &s,
            sol.z.values(),
            sol.q_hat.values(),
            sol.u_hat.values(),
            solved.band.y_lower.values(),
            solved.band.y_upper.values(),
        ],
    )?;
    let summary = Summary {
        horizon: &cfg.horizon,
        x0: cfg.x0_value()?,
        value_at_mean: sol.value_at_mean,
        residual_sup: sol.residual_sup,
        iterations: sol.iterations_or_bisections,
        zeta_star: solved.zeta_star,
        terminal_gap: solved.terminal_gap,
        steady_reached: solved.steady_reached,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "value_at_mean={} residual_sup={} iterations={}",
        format_f64(sol.value_at_mean),
        format_f64(sol.residual_sup),
        sol.iterations_or_bisections
    );
    Ok(0)
}

fn cmd_simulate(cfg: &RunConfig) -> Result<u8, MfgError> {
    let dir = out_dir(cfg)?;
    let solved = solve(cfg, dir)?;
    let sol = &solved.sol;
    let init = cfg.initial_distribution()?;
    let s: Vec<f64> = sol.q_hat.grid().points().collect();
    for &sigma in &cfg.sigmas {
        let params = cfg.params.with_sigma(sigma);
        let ens = simulate_paths(&params, &sol.u_hat, &init, cfg.paths, cfg.solver.rng_seed, cfg.store_paths)?;
        let gap = consistency_gap(&ens, &sol.q_hat);
        let mut names = headers(&["s", "q_hat", "mean_path", "std_path"]);
        names.extend((1..=ens.stored_paths.len()).map(|i| format!("path_{i}")));
        let mut cols: Vec<&[f64]> = vec![&s, sol.q_hat.values(), ens.mean_path.values(), ens.std_path.values()];
        cols.extend(ens.stored_paths.iter().map(|p| p.values()));
        write_csv(&dir.join(format!("simulation_sigma_{sigma}.csv")), &names, &cols)?;
        println!("sigma={sigma} paths={} gap={gap:.4} flagged={}", cfg.paths, gap > 4.0);
    }
    Ok(0)
}

fn cmd_deterministic(cfg: &RunConfig) -> Result<u8, MfgError> {
    let x = cfg.x0_value()?;
    let m0 = match cfg.init {
        InitShape::LogNormal(v) => InitialDensity::LogNormal { mean: x, v },
        InitShape::Uniform(w) => InitialDensity::Uniform { a: x - w, b: x + w },
        InitShape::Point => {
            return Err(MfgError::Config(
                "the deterministic model needs a density: init = lognormal:<v> or uniform:<halfwidth>".into(),
            ))
        }
    };
    let dir = out_dir(cfg)?;
    let sol = match cfg.horizon {
        Horizon::Finite(t) => solve_deterministic_equilibrium(&cfg.params, &m0, &cfg.finite_grid(t)?, &cfg.solver)?.0,
        Horizon::Infinite(s) => {
            solve_deterministic_equilibrium_infinite(&cfg.params, &m0, s, &cfg.infinite_solver(s))?.0
        }
    };
    let s: Vec<f64> = sol.q_hat.grid().points().collect();
    write_csv(
        &dir.join("deterministic_equilibrium.csv"),
        &headers(&["s", "q_hat", "u_hat"]),
        &[&s, sol.q_hat.values(), sol.u_hat.values()],
    )?;
    for &t in &cfg.times {
        let xs = default_x_grid(&cfg.params, &m0, &sol.u_hat, t)?;
        let snap = pushforward_density(&cfg.params, &m0, &sol.u_hat, t, &xs)?;
        let closed = density_mean(&cfg.params, &m0, &sol.u_hat, t)?;
        println!(
            "time={t} mass={} mean_grid={} mean_closed={}",
            format_f64(snap.mass()),
            format_f64(snap.mean()),
            format_f64(closed)
        );
        write_csv(&dir.join(format!("density_t{t}.csv")), &headers(&["x", "density"]), &[&xs, &snap.values])?;
    }
    Ok(0)
}

fn cmd_validate(cfg: &RunConfig) -> Result<u8, MfgError> {
    let checks = run_validation(cfg)?;
    println!("{:<30} {:>14} {:>12}  result", "check", "measured", "threshold");
    for c in &checks {
        println!(
            "{:<30} {:>14.6e} {:>12.3e}  {}{}",
            c.name,
            c.measured,
            c.threshold,
            if c.passed { "PASS" } else { "FAIL" },
            if c.note.is_empty() { String::new() } else { format!("  ({})", c.note) }
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(if failed == 0 { 0 } else { EXIT_VALIDATION })
}
