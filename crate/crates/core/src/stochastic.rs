//! Monte Carlo simulation of the controlled capacity
//!
//! ```text
//! X_s = Y_s (xi + int_0^s u_r / Y_r dr),   Y_s = exp(sigma B_s - (delta + sigma^2/2) s).
//! ```
//!
//! `log Y` is advanced exactly on the grid, so the only discretisation is the
//! trapezoid rule for `int u/Y`. With that rule the expected simulated path
//! coincides with [`analytic_mean`] at every grid point, which makes the mean
//! test unbiased.
//!
//! Path `i` draws from a ChaCha8 generator seeded with the master seed and
//! switched to stream `i`; Gaussian increments use the ziggurat sampler of
//! `rand_distr::StandardNormal`. Paths are processed in fixed blocks whose
//! statistics are merged along a fixed binary tree, so results do not depend
//! on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::finite::mean_capacity;
use crate::model::{GridFunction, InitialDistribution, ModelParams, TimeGrid};

/// Paths per block of the parallel reduction.
const BLOCK: usize = 512;
/// Default number of stored paths.
pub const DEFAULT_STORED_PATHS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    pub mean_path: GridFunction,
    /// Sample standard deviation (divisor `n - 1`; zero for a single path).
    pub std_path: GridFunction,
    /// The first `store_k` paths.
    pub stored_paths: Vec<GridFunction>,
}

impl PathEnsemble {
    /// Pointwise standard error of the mean.
    pub fn std_error(&self) -> GridFunction {
        let n = self.n_paths as f64;
        self.std_path.map(|s| s / n.sqrt())
    }
}

/// Running mean and sum of squared deviations, merged with Chan's formula.
#[derive(Debug, Clone)]
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Moments { count: 0.0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.count;
            *s += d * (v - *m);
        }
    }

    fn merge(mut self, other: Moments) -> Moments {
        if other.count == 0.0 {
            return self;
        }
        let n = self.count + other.count;
        for k in 0..self.mean.len() {
            let d = other.mean[k] - self.mean[k];
            self.mean[k] += d * other.count / n;
            self.m2[k] += other.m2[k] + d * d * self.count * other.count / n;
        }
        self.count = n;
        self
    }

    fn variance(&self) -> Vec<f64> {
        if self.count < 2.0 {
            return vec![0.0; self.mean.len()];
        }
        self.m2.iter().map(|s| (s / (self.count - 1.0)).max(0.0)).collect()
    }
}

/// Pairwise reduction in a fixed order.
fn tree_merge(mut parts: Vec<Moments>) -> Moments {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => a.merge(b),
                None => a,
            });
        }
        parts = next;
    }
    parts.pop().expect("at least one block")
}

fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Writes one path of `X` into `out`.
fn simulate_one(
    params: &ModelParams,
    u: &[f64],
    h: f64,
    xi: f64,
    rng: &mut ChaCha8Rng,
    out: &mut [f64],
) {
    let drift = -(params.delta + 0.5 * params.sigma * params.sigma) * h;
    let vol = params.sigma * h.sqrt();
    let mut log_y = 0.0f64;
    let mut y = 1.0f64;
    let mut integral = 0.0;
    out[0] = xi;
    for k in 1..out.len() {
        let z: f64 = if vol > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
        log_y += drift + vol * z;
        let y_next = log_y.exp();
        integral += 0.5 * h * (u[k - 1] / y + u[k] / y_next);
        y = y_next;
        out[k] = y * (xi + integral);
    }
}

fn check_control(u: &GridFunction) -> Result<()> {
    match u.values().iter().position(|&v| v < 0.0) {
        None => Ok(()),
        Some(k) => Err(MfgError::Domain(format!(
            "control must be nonnegative, found {} at s = {}",
            u.values()[k],
            u.grid().point(k)
        ))),
    }
}

fn check_inputs(params: &ModelParams, u: &GridFunction, init: &InitialDistribution, n_paths: usize) -> Result<()> {
    params.validate()?;
    init.validate()?;
    check_control(u)?;
    if n_paths == 0 {
        return Err(MfgError::InvalidParameter("n_paths must be at least 1".into()));
    }
    Ok(())
}

/// Runs `visit(path_index, path)` for every path of a block, in index order.
fn run_block(
    params: &ModelParams,
    u: &GridFunction,
    init: &InitialDistribution,
    seed: u64,
    range: std::ops::Range<usize>,
    mut visit: impl FnMut(usize, &[f64]),
) {
    let h = u.grid().step();
    let mut buf = vec![0.0; u.len()];
    for i in range {
        let mut rng = path_rng(seed, i);
        let xi = init.sample(&mut rng);
        simulate_one(params, u.values(), h, xi, &mut rng, &mut buf);
        visit(i, &buf);
    }
}

fn blocks(n_paths: usize) -> Vec<std::ops::Range<usize>> {
    (0..n_paths.div_ceil(BLOCK))
        .map(|b| b * BLOCK..((b + 1) * BLOCK).min(n_paths))
        .collect()
}

/// Simulates `n_paths` trajectories under the deterministic control `u` and
/// keeps the first `store_k` of them.
pub fn simulate_paths(
    params: &ModelParams,
    u: &GridFunction,
    init: &InitialDistribution,
    n_paths: usize,
    seed: u64,
    store_k: usize,
) -> Result<PathEnsemble> {
    check_inputs(params, u, init, n_paths)?;
    let grid = *u.grid();
    let results: Vec<(Moments, Vec<Vec<f64>>)> = blocks(n_paths)
        .into_par_iter()
        .map(|range| {
            let mut m = Moments::new(grid.len());
            let mut kept = Vec::new();
            run_block(params, u, init, seed, range, |i, x| {
                m.push(x);
                if i < store_k {
                    kept.push(x.to_vec());
                }
            });
            (m, kept)
        })
        .collect();
    let mut stored = Vec::new();
    let mut parts = Vec::with_capacity(results.len());
    for (m, kept) in results {
        parts.push(m);
        stored.extend(kept);
    }
    let moments = tree_merge(parts);
    let std: Vec<f64> = moments.variance().into_iter().map(f64::sqrt).collect();
    Ok(PathEnsemble {
        grid,
        n_paths,
        seed,
        mean_path: GridFunction::new(grid, moments.mean.clone())?,
        std_path: GridFunction::new(grid, std)?,
        stored_paths: stored
            .into_iter()
            .map(|v| GridFunction::new(grid, v))
            .collect::<Result<_>>()?,
    })
}

/// `E[X_s] = e^{-delta s} x_mean + int_0^s e^{-delta(s-r)} u_r dr`, independent of `sigma`.
pub fn analytic_mean(params: &ModelParams, u: &GridFunction, x_mean: f64) -> Result<GridFunction> {
    check_control(u)?;
    Ok(mean_capacity(params, x_mean, u))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfitEstimate {
    pub estimate: f64,
    pub std_error: f64,
    /// `e^{-rho T} / rho * sup_s |E[X_s] q_s^-beta - u_s^2/2|`: size of the
    /// discounted profit beyond `T` if the undiscounted integrand stays within
    /// its range on the grid.
    pub tail_bound: f64,
}

fn scalar_stats(parts: Vec<Moments>) -> (f64, f64, Moments) {
    let m = tree_merge(parts);
    let se = (m.variance()[0] / m.count).sqrt();
    (m.mean[0], se, m)
}

/// Per-path discounted profit `int_0^T e^{-rho s} (X_s q_s^-beta - u_s^2/2) ds`
/// by the trapezoid rule, averaged over paths.
pub fn estimate_profit(
    params: &ModelParams,
    q: &GridFunction,
    u: &GridFunction,
    init: &InitialDistribution,
    n_paths: usize,
    seed: u64,
) -> Result<ProfitEstimate> {
    check_inputs(params, u, init, n_paths)?;
    check_same_grid(q, u)?;
    let weights = profit_weights(params, q, u);
    let parts: Vec<(Moments, Moments)> = blocks(n_paths)
        .into_par_iter()
        .map(|range| {
            let mut scalar = Moments::new(1);
            let mut mean = Moments::new(u.len());
            run_block(params, u, init, seed, range, |_, x| {
                scalar.push(&[discounted_profit(&weights, x)]);
                mean.push(x);
            });
            (scalar, mean)
        })
        .collect();
    let (scalars, means): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    let (estimate, std_error, _) = scalar_stats(scalars);
    let mean_x = tree_merge(means).mean;
    let sup = (0..u.len())
        .map(|k| (mean_x[k] * weights.price[k] - 0.5 * u.values()[k].powi(2)).abs())
        .fold(0.0, f64::max);
    let tail_bound = (-params.rho * u.grid().t_end()).exp() / params.rho * sup;
    Ok(ProfitEstimate { estimate, std_error, tail_bound })
}

/// Estimates `J(u_a) - J(u_b)` with common random numbers: both controls see
/// the same initial draws and Brownian increments.
pub fn estimate_profit_difference(
    params: &ModelParams,
    q: &GridFunction,
    u_a: &GridFunction,
    u_b: &GridFunction,
    init: &InitialDistribution,
    n_paths: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_inputs(params, u_a, init, n_paths)?;
    check_control(u_b)?;
    check_same_grid(q, u_a)?;
    check_same_grid(q, u_b)?;
    let (wa, wb) = (profit_weights(params, q, u_a), profit_weights(params, q, u_b));
    let h = u_a.grid().step();
    let parts: Vec<Moments> = blocks(n_paths)
        .into_par_iter()
        .map(|range| {
            let mut m = Moments::new(1);
            let mut xa = vec![0.0; u_a.len()];
            let mut xb = vec![0.0; u_a.len()];
            for i in range {
                let mut rng = path_rng(seed, i);
                let xi = init.sample(&mut rng);
                let mut rng_b = rng.clone();
                simulate_one(params, u_a.values(), h, xi, &mut rng, &mut xa);
                simulate_one(params, u_b.values(), h, xi, &mut rng_b, &mut xb);
                m.push(&[discounted_profit(&wa, &xa) - discounted_profit(&wb, &xb)]);
            }
            m
        })
        .collect();
    let (mean, se, _) = scalar_stats(parts);
    Ok((mean, se))
}

struct ProfitWeights {
    /// Trapezoid weight times discount.
    w: Vec<f64>,
    price: Vec<f64>,
    /// `sum_k w_k u_k^2 / 2`.
    cost: f64,
}

fn profit_weights(params: &ModelParams, q: &GridFunction, u: &GridFunction) -> ProfitWeights {
    let grid = *q.grid();
    let h = grid.step();
    let n = grid.n_steps();
    let w: Vec<f64> = (0..=n)
        .map(|k| {
            let t = if k == 0 || k == n { 0.5 * h } else { h };
            t * (-params.rho * grid.point(k)).exp()
        })
        .collect();
    let price = q.values().iter().map(|v| v.powf(-params.beta)).collect();
    let cost = w.iter().zip(u.values()).map(|(w, u)| 0.5 * w * u * u).sum();
    ProfitWeights { w, price, cost }
}

fn discounted_profit(pw: &ProfitWeights, x: &[f64]) -> f64 {
    let revenue: f64 = x.iter().zip(&pw.w).zip(&pw.price).map(|((x, w), p)| w * x * p).sum();
    revenue - pw.cost
}

fn check_same_grid(a: &GridFunction, b: &GridFunction) -> Result<()> {
    if a.grid() == b.grid() {
        Ok(())
    } else {
        Err(MfgError::Domain("price path and control must share one grid".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaRow {
    pub sigma: f64,
    /// `sup_s |mean_path - analytic_mean| / SE_s`.
    pub gap: f64,
    /// `gap > 4`.
    pub flagged: bool,
    pub ensemble: PathEnsemble,
}

/// Largest standardised distance between a simulated mean and `target`.
/// Points with zero standard error count as zero when the means agree to 1e-8.
pub fn consistency_gap(ensemble: &PathEnsemble, target: &GridFunction) -> f64 {
    let se = ensemble.std_error();
    ensemble
        .mean_path
        .values()
        .iter()
        .zip(target.values())
        .zip(se.values())
        .map(|((m, t), s)| {
            let d = (m - t).abs();
            if *s > 0.0 {
                d / s
            } else if d <= 1e-8 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

/// One simulation per parameter set (identical except for `sigma`) against the
/// same control, reporting the consistency gap with the analytic mean.
pub fn sigma_invariance_report(
    params_list: &[ModelParams],
    u: &GridFunction,
    init: &InitialDistribution,
    n_paths: usize,
    seed: u64,
    store_k: usize,
) -> Result<Vec<SigmaRow>> {
    if let Some(first) = params_list.first() {
        let same = params_list.iter().all(|p| {
            p.rho == first.rho && p.delta == first.delta && p.beta == first.beta
        });
        if !same {
            return Err(MfgError::InvalidParameter(
                "parameter sets may differ only in sigma".into(),
            ));
        }
    }
    params_list
        .iter()
        .map(|p| {
            let ensemble = simulate_paths(p, u, init, n_paths, seed, store_k)?;
            let target = analytic_mean(p, u, init.mean())?;
            let gap = consistency_gap(&ensemble, &target);
            Ok(SigmaRow { sigma: p.sigma, gap, flagged: gap > 4.0, ensemble })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite::solve_equilibrium_finite_at_mean;
    use crate::model::SolverConfig;

    fn reference_params(sigma: f64) -> ModelParams {
        ModelParams::reference(sigma)
    }

    fn equilibrium(t: f64, n: usize) -> (GridFunction, GridFunction) {
        let (sol, _) = solve_equilibrium_finite_at_mean(
            &reference_params(0.0),
            10.0,
            &TimeGrid::new(t, n).unwrap(),
            &SolverConfig::default(),
        )
        .unwrap();
        (sol.q_hat, sol.u_hat)
    }

    #[test]
    fn noiseless_paths_follow_the_equilibrium() {
        let (q, u) = equilibrium(30.0, 600);
        let ens = simulate_paths(&reference_params(0.0), &u, &InitialDistribution::PointMass(10.0), 3, 1, 3).unwrap();
        for p in &ens.stored_paths {
            assert!(p.sup_distance(&q) < 1e-8);
        }
        assert!(ens.std_path.sup_abs() < 1e-12);
        assert_eq!(consistency_gap(&ens, &q), 0.0);
    }

    #[test]
    fn uncontrolled_mean_decays() {
        let g = TimeGrid::new(20.0, 200).unwrap();
        let u = GridFunction::constant(g, 0.0).unwrap();
        let p = reference_params(0.3);
        let ens = simulate_paths(&p, &u, &InitialDistribution::PointMass(1.0), 100_000, 9, 0).unwrap();
        let target = GridFunction::from_fn(g, |s| (-p.delta * s).exp()).unwrap();
        assert!(consistency_gap(&ens, &target) < 4.0);
        assert!(ens.stored_paths.is_empty());
    }

    #[test]
    fn analytic_mean_constant_control() {
        let p = reference_params(0.2);
        let g = TimeGrid::new(30.0, 3000).unwrap();
        let c = 0.3;
        let m = analytic_mean(&p, &GridFunction::constant(g, c).unwrap(), 10.0).unwrap();
        let err = g
            .points()
            .zip(m.values())
            .map(|(s, v)| {
                let e = (-p.delta * s).exp();
                (v - (10.0 * e + c * (1.0 - e) / p.delta)).abs()
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-7, "{err}");
        let zero = analytic_mean(&p, &GridFunction::constant(g, 0.0).unwrap(), 10.0).unwrap();
        assert!(zero.values().iter().zip(g.points()).all(|(v, s)| (v - 10.0 * (-p.delta * s).exp()).abs() < 1e-12));
    }

    #[test]
    fn paths_are_positive_and_seeded() {
        let (_, u) = equilibrium(30.0, 300);
        let init = InitialDistribution::LogNormal { mean: 10.0, v: 0.5 };
        let a = simulate_paths(&reference_params(0.5), &u, &init, 2000, 77, 10).unwrap();
        assert!(a.stored_paths.iter().all(|p| p.values().iter().all(|&x| x > 0.0)));
        assert_eq!(a.stored_paths.len(), 10);
        let b = simulate_paths(&reference_params(0.5), &u, &init, 2000, 77, 10).unwrap();
        assert_eq!(a, b);
        let c = simulate_paths(&reference_params(0.5), &u, &init, 2000, 78, 10).unwrap();
        assert_ne!(a.mean_path, c.mean_path);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let (_, u) = equilibrium(30.0, 300);
        let init = InitialDistribution::Uniform { a: 5.0, b: 15.0 };
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_paths(&reference_params(0.1), &u, &init, 5000, 3, 4).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert_eq!(one, run(8));
    }

    #[test]
    fn negative_control_rejected() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let u = GridFunction::constant(g, -0.1).unwrap();
        assert!(matches!(
            simulate_paths(&reference_params(0.1), &u, &InitialDistribution::PointMass(1.0), 10, 0, 0),
            Err(MfgError::Domain(_))
        ));
    }

    #[test]
    fn profit_without_investment() {
        let p = reference_params(0.1);
        let t = 30.0;
        let g = TimeGrid::new(t, 600).unwrap();
        let (q, u) = (GridFunction::constant(g, 1.0).unwrap(), GridFunction::constant(g, 0.0).unwrap());
        let est = estimate_profit(&p, &q, &u, &InitialDistribution::PointMass(10.0), 100_000, 4).unwrap();
        let c = p.rho + p.delta;
        let exact = 10.0 * (1.0 - (-c * t).exp()) / c;
        assert!((est.estimate - exact).abs() < 4.0 * est.std_error, "{est:?} vs {exact}");
    }

    #[test]
    fn small_noise_scales_spread_linearly() {
        let (_, u) = equilibrium(30.0, 300);
        let init = InitialDistribution::PointMass(10.0);
        let a = simulate_paths(&reference_params(0.001), &u, &init, 20_000, 8, 0).unwrap();
        let b = simulate_paths(&reference_params(0.01), &u, &init, 20_000, 8, 0).unwrap();
        let k = 150;
        let r = b.std_path.values()[k] / a.std_path.values()[k];
        assert!((8.0..12.0).contains(&r), "{r}");
    }

    #[test]
    fn sigma_rows_require_common_parameters() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let u = GridFunction::constant(g, 0.1).unwrap();
        let list = [reference_params(0.1), ModelParams::new(0.05, 0.01, 2.0, 0.1).unwrap()];
        assert!(sigma_invariance_report(&list, &u, &InitialDistribution::PointMass(1.0), 10, 0, 0).is_err());
    }
}
