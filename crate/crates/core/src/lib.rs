//! Mean-field equilibrium of a stochastic optimal-investment game with
//! isoelastic demand.
//!
//! Each agent controls a production capacity
//!
//! ```text
//! dX_s = (u_s - delta X_s) ds + sigma X_s dB_s,   X_0 = xi,
//! ```
//!
//! and maximises `E int e^{-rho s} (X_s q_s^-beta - u_s^2 / 2) ds` against the
//! population average capacity `q`. The equilibrium average `q_hat` solves
//!
//! ```text
//! q_s = e^{-delta s} E[xi] + int_0^s e^{-delta (s-r)} int_r^T e^{-(rho+delta)(u-r)} q_u^-beta du dr,
//! ```
//!
//! which [`finite`] solves by damped Picard iteration and [`infinite`] by
//! shooting on the equivalent second-order ODE. [`stochastic`] checks the
//! consistency condition by Monte Carlo and [`deterministic`] implements the
//! noiseless continuity-equation model.

pub mod bounds;
pub mod config;
pub mod deterministic;
pub mod error;
pub mod finite;
pub mod infinite;
pub mod kernel;
pub mod model;
pub mod output;
pub mod stochastic;
pub mod validation;

#[cfg(test)]
pub(crate) mod oracle;

pub use error::{MfgError, Result};
pub use model::{
    steady_state, steady_state_residual, EquilibriumSolution, GridFunction, HorizonMode,
    InitialDistribution, ModelParams, SolverConfig, TimeGrid,
};
