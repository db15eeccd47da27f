//! A priori envelopes for the equilibrium.
//!
//! In the transformed variable `z_s = e^{delta s} q_s` every solution satisfies
//! `x <= z_s <= x + x^-beta I(s)`, with
//!
//! ```text
//! I(s) = int_0^s e^{c r} int_r^T e^{-a u} du dr,   a = rho + delta - delta beta,  c = rho + 2 delta.
//! ```
//!
//! The closed form of `I` divides by `a`, which vanishes at `beta = 1 + rho/delta`.
//! Three evaluation regimes are used: the generic formula, a second-order
//! Taylor expansion in `a` when `|a| T < SERIES_SWITCH`, and the exact `a = 0`
//! expression when `|beta - (1 + rho/delta)| < BRANCH_SWITCH`.

use serde::Serialize;

use crate::error::Result;
use crate::model::{GridFunction, ModelParams, TimeGrid};

/// `|beta - (1 + rho/delta)|` below which the `a = 0` closed form is used.
pub const BRANCH_SWITCH: f64 = 1e-9;
/// `|a| * T` below which the Taylor expansion in `a` replaces the generic formula.
pub const SERIES_SWITCH: f64 = 1e-4;

/// Lower and upper envelopes in both coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AprioriBand {
    pub z_lower: GridFunction,
    pub z_upper: GridFunction,
    /// `e^{-delta s} x`
    pub y_lower: GridFunction,
    /// `e^{-delta s} z_upper`
    pub y_upper: GridFunction,
}

impl AprioriBand {
    fn from_z_upper(params: &ModelParams, x: f64, grid: TimeGrid, upper: Vec<f64>) -> Result<Self> {
        let decay: Vec<f64> = grid.points().map(|s| (-params.delta * s).exp()).collect();
        let y_lower = decay.iter().map(|d| d * x).collect();
        let y_upper = decay.iter().zip(&upper).map(|(d, u)| d * u).collect();
        Ok(AprioriBand {
            z_lower: GridFunction::constant(grid, x)?,
            z_upper: GridFunction::new(grid, upper)?,
            y_lower: GridFunction::new(grid, y_lower)?,
            y_upper: GridFunction::new(grid, y_upper)?,
        })
    }

    /// Whether `q` lies in `[y_lower, y_upper]` up to a relative slack.
    pub fn contains_y(&self, q: &GridFunction, rel_slack: f64) -> bool {
        q.values()
            .iter()
            .zip(self.y_lower.values().iter().zip(self.y_upper.values()))
            .all(|(&v, (&lo, &hi))| {
                v >= lo * (1.0 - rel_slack) && v <= hi * (1.0 + rel_slack)
            })
    }
}

/// `I(s)` for the finite horizon `t_end`.
fn double_integral(a: f64, c: f64, t_end: f64, s: f64, exact_branch: bool) -> f64 {
    let ecs_m1 = (c * s).exp_m1();
    let m0 = ecs_m1 / c;
    // a = 0: int_0^s e^{cr} (T - r) dr
    let i0 = (t_end - s) * m0 + (ecs_m1 - c * s) / (c * c);
    if exact_branch {
        return i0;
    }
    if (a * t_end.max(s)).abs() < SERIES_SWITCH {
        // I(a) = I0 - a J1 + a^2/2 J2,  J_n = [T^{n+1} M0 - M_{n+1}] / (n + 1)
        let ecs = (c * s).exp();
        let m1 = (s * ecs - m0) / c;
        let m2 = (s * s * ecs - 2.0 * m1) / c;
        let m3 = (s * s * s * ecs - 3.0 * m2) / c;
        let j1 = (t_end * t_end * m0 - m2) / 2.0;
        let j2 = (t_end.powi(3) * m0 - m3) / 3.0;
        return i0 - a * j1 + 0.5 * a * a * j2;
    }
    let growth = c - a; // delta (1 + beta) > 0
    ((growth * s).exp_m1() / growth - (-a * t_end).exp() * m0) / a
}

fn is_exact_branch(params: &ModelParams) -> bool {
    (params.beta - params.beta_limit()).abs() < BRANCH_SWITCH
}

/// Upper envelope `z_upper(s)` for the horizon `t_end`.
pub fn upper_envelope_finite(params: &ModelParams, x: f64, t_end: f64, s: f64) -> f64 {
    let a = params.rho + params.delta - params.delta * params.beta;
    let c = params.rho + 2.0 * params.delta;
    x + x.powf(-params.beta) * double_integral(a, c, t_end, s, is_exact_branch(params))
}

/// Upper envelope on the infinite horizon; requires `beta < 1 + rho/delta`.
pub fn upper_envelope_infinite(params: &ModelParams, x: f64, s: f64) -> f64 {
    let a = params.rho + params.delta - params.delta * params.beta;
    let growth = params.delta * (1.0 + params.beta);
    x + x.powf(-params.beta) * (growth * s).exp_m1() / (a * growth)
}

fn check_x(x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(crate::error::MfgError::Domain(format!(
            "initial mean x = {x} must be positive"
        )))
    }
}

/// Envelopes on `[0, T]`, `T = grid.t_end()`. Any `beta > 0` is admitted.
pub fn apriori_bounds_finite(params: &ModelParams, x: f64, grid: &TimeGrid) -> Result<AprioriBand> {
    params.validate()?;
    check_x(x)?;
    let t_end = grid.t_end();
    let upper = grid
        .points()
        .map(|s| upper_envelope_finite(params, x, t_end, s))
        .collect();
    AprioriBand::from_z_upper(params, x, *grid, upper)
}

/// Envelopes on `[0, grid.t_end()]` for the infinite-horizon problem.
pub fn apriori_bounds_infinite(params: &ModelParams, x: f64, grid: &TimeGrid) -> Result<AprioriBand> {
    params.check_infinite_horizon()?;
    check_x(x)?;
    let upper = grid
        .points()
        .map(|s| upper_envelope_infinite(params, x, s))
        .collect();
    AprioriBand::from_z_upper(params, x, *grid, upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::MfgError;
    use crate::oracle::gauss_legendre;

    /// Nested numerical quadrature of `x + x^-beta int_0^s e^{cr} int_r^T e^{-a u} du dr`.
    fn quadrature_upper(p: &ModelParams, x: f64, t_end: f64, s: f64) -> f64 {
        let a = p.rho + p.delta - p.delta * p.beta;
        let c = p.rho + 2.0 * p.delta;
        let inner = |r: f64| gauss_legendre(|u| (-a * u).exp(), r, t_end, 64);
        x + x.powf(-p.beta) * gauss_legendre(|r| (c * r).exp() * inner(r), 0.0, s, 64)
    }

    fn quadrature_upper_infinite(p: &ModelParams, x: f64, s: f64) -> f64 {
        let a = p.rho + p.delta - p.delta * p.beta;
        let c = p.rho + 2.0 * p.delta;
        // the integrand is below e^{-40} of its size at r beyond r + 40/a
        let inner = |r: f64| gauss_legendre(|u| (-a * u).exp(), r, r + 40.0 / a, 200);
        x + x.powf(-p.beta) * gauss_legendre(|r| (c * r).exp() * inner(r), 0.0, s, 64)
    }

    #[test]
    fn both_bounds_start_at_x() {
        let p = ModelParams::reference(0.1);
        let g = TimeGrid::new(30.0, 300).unwrap();
        let b = apriori_bounds_finite(&p, 10.0, &g).unwrap();
        assert_eq!(b.z_lower.first(), 10.0);
        assert_eq!(b.z_upper.first(), 10.0);
        let b = apriori_bounds_infinite(&p, 10.0, &g).unwrap();
        assert_eq!(b.z_upper.first(), 10.0);
        assert_eq!(b.y_upper.first(), 10.0);
    }

    #[test]
    fn finite_generic_branch_matches_quadrature() {
        let p = ModelParams::reference(0.0);
        let closed = upper_envelope_finite(&p, 10.0, 30.0, 30.0);
        let quad = quadrature_upper(&p, 10.0, 30.0, 30.0);
        assert!(((closed - quad) / quad).abs() < 1e-8, "{closed} vs {quad}");
        for s in [0.5, 7.0, 19.3] {
            let closed = upper_envelope_finite(&p, 10.0, 30.0, s);
            let quad = quadrature_upper(&p, 10.0, 30.0, s);
            assert!(((closed - quad) / quad).abs() < 1e-8);
        }
    }

    #[test]
    fn finite_critical_branch_matches_quadrature() {
        // beta = 1 + rho/delta = 4
        let p = ModelParams::new(0.03, 0.01, 4.0, 0.0).unwrap();
        assert!(is_exact_branch(&p));
        let closed = upper_envelope_finite(&p, 10.0, 10.0, 5.0);
        let quad = quadrature_upper(&p, 10.0, 10.0, 5.0);
        assert!(closed > 10.0);
        assert!(((closed - quad) / quad).abs() < 1e-8, "{closed} vs {quad}");
    }

    #[test]
    fn continuity_across_branch_switch() {
        // walk beta through the critical value; all three regimes must agree with quadrature
        for offset in [-1e-2, -1e-5, -2e-8, -1e-10, 0.0, 1e-10, 3e-8, 1e-5, 1e-2] {
            let p = ModelParams::new(0.03, 0.01, 4.0 + offset, 0.0).unwrap();
            for (t_end, s) in [(10.0, 5.0), (60.0, 60.0), (200.0, 17.0)] {
                let closed = upper_envelope_finite(&p, 2.0, t_end, s);
                let quad = quadrature_upper(&p, 2.0, t_end, s);
                assert!(
                    ((closed - quad) / quad).abs() < 1e-9,
                    "offset {offset} T {t_end} s {s}: {closed} vs {quad}"
                );
            }
        }
    }

    #[test]
    fn infinite_matches_quadrature() {
        let p = ModelParams::reference(0.0);
        let closed = upper_envelope_infinite(&p, 10.0, 100.0);
        let quad = quadrature_upper_infinite(&p, 10.0, 100.0);
        assert!(((closed - quad) / quad).abs() < 1e-8, "{closed} vs {quad}");
    }

    #[test]
    fn infinite_is_limit_of_finite() {
        let p = ModelParams::reference(0.0);
        let g = TimeGrid::new(100.0, 1000).unwrap();
        let fin = apriori_bounds_finite(&p, 10.0, &TimeGrid::new(1e4, 100_000).unwrap()).unwrap();
        let inf = apriori_bounds_infinite(&p, 10.0, &g).unwrap();
        // both grids share the step 0.1, so the first 1001 points coincide
        let diff = inf
            .z_upper
            .values()
            .iter()
            .zip(fin.z_upper.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn infinite_y_space_matches_explicit_form() {
        let p = ModelParams::reference(0.0);
        let x = 10.0;
        let g = TimeGrid::new(300.0, 300).unwrap();
        let b = apriori_bounds_infinite(&p, x, &g).unwrap();
        let a = p.rho + p.delta - p.delta * p.beta;
        let coef = x.powf(-p.beta) / (p.delta * (1.0 + p.beta) * a);
        for (s, &v) in g.points().zip(b.y_upper.values()) {
            let explicit = (-p.delta * s).exp() * (x - coef) + (p.delta * p.beta * s).exp() * coef;
            assert!(((v - explicit) / explicit).abs() < 1e-12);
        }
    }

    #[test]
    fn infinite_rejects_horizon_violation() {
        let p = ModelParams::new(0.03, 0.01, 5.0, 0.0).unwrap();
        let g = TimeGrid::new(10.0, 10).unwrap();
        assert!(matches!(
            apriori_bounds_infinite(&p, 10.0, &g),
            Err(MfgError::HorizonCondition { .. })
        ));
        assert!(apriori_bounds_finite(&p, 10.0, &g).is_ok());
    }

    #[test]
    fn random_bounds_are_ordered_and_monotone() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = ModelParams::new(
                rng.random_range(0.005..0.2),
                rng.random_range(0.005..0.1),
                rng.random_range(0.1..6.0),
                0.0,
            )
            .unwrap();
            let x = rng.random_range(0.5..50.0);
            let t = rng.random_range(0.5..100.0);
            let g = TimeGrid::new(t, 200).unwrap();
            let b = apriori_bounds_finite(&p, x, &g).unwrap();
            let up = b.z_upper.values();
            assert!(up.iter().all(|&u| u.is_finite() && u >= x));
            assert!(up.windows(2).all(|w| w[1] >= w[0]));
            if p.check_infinite_horizon().is_ok() {
                let bi = apriori_bounds_infinite(&p, x, &g).unwrap();
                let ui = bi.z_upper.values();
                assert!(ui.windows(2).all(|w| w[1] >= w[0]));
                assert!(ui.iter().zip(up).all(|(i, f)| *i >= *f * (1.0 - 1e-12)));
            }
        }
    }
}
