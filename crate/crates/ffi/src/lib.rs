//! C ABI over `mfg_capacity`.
//!
//! Every entry point returns an [`MfgStatus`]; on failure the message is kept
//! per thread and can be read with [`mfg_last_error_message`]. Solutions are
//! opaque handles released with [`mfg_solution_free`].

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use mfg_capacity::finite::solve_equilibrium_finite_at_mean;
use mfg_capacity::infinite::shoot_equilibrium_infinite_at_mean;
use mfg_capacity::stochastic::simulate_paths;
use mfg_capacity::{
    steady_state, EquilibriumSolution, InitialDistribution, MfgError, ModelParams, SolverConfig, TimeGrid,
};

pub use mfg_capacity;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParams = 2,
    HorizonCondition = 3,
    Convergence = 4,
    Shooting = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Model parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MfgParams {
    pub rho: f64,
    pub delta: f64,
    pub beta: f64,
    pub sigma: f64,
}

/// Solver settings; fill with `mfg_solver_options_default()`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MfgSolverOptions {
    pub tol_fixed_point: f64,
    pub max_iterations: u32,
    pub damping: f64,
    pub tol_shoot_zeta: f64,
    pub infinite_step: f64,
    pub extension: f64,
}

/// Series stored in a solution.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfgSeries {
    Time = 0,
    Z = 1,
    QHat = 2,
    UHat = 3,
}

/// Opaque equilibrium handle.
pub struct MfgSolution {
    params: ModelParams,
    x0: f64,
    inner: EquilibriumSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &MfgError) -> MfgStatus {
    match e {
        MfgError::HorizonCondition { .. } => MfgStatus::HorizonCondition,
        MfgError::Convergence(_) => MfgStatus::Convergence,
        MfgError::Shooting { .. } => MfgStatus::Shooting,
        _ => MfgStatus::InvalidParams,
    }
}

fn guard(f: impl FnOnce() -> Result<(), MfgStatus>) -> MfgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MfgStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            MfgStatus::Panic
        }
    }
}

fn fail(e: MfgError) -> MfgStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> MfgStatus {
    set_error(format!("{what} is null"));
    MfgStatus::NullPointer
}

fn model(p: *const MfgParams) -> Result<ModelParams, MfgStatus> {
    // SAFETY: checked for null; the caller guarantees a valid pointer otherwise.
    let p = unsafe { p.as_ref() }.ok_or_else(|| null("params"))?;
    ModelParams::new(p.rho, p.delta, p.beta, p.sigma).map_err(fail)
}

fn solver(o: *const MfgSolverOptions) -> Result<SolverConfig, MfgStatus> {
    let mut cfg = SolverConfig::default();
    // SAFETY: null selects the defaults.
    if let Some(o) = unsafe { o.as_ref() } {
        cfg.tol_fixed_point = o.tol_fixed_point;
        cfg.max_iterations = o.max_iterations as usize;
        cfg.damping = o.damping;
        cfg.tol_shoot_zeta = o.tol_shoot_zeta;
        cfg.infinite_step = o.infinite_step;
        cfg.extension = o.extension;
    }
    cfg.validate().map_err(fail)?;
    Ok(cfg)
}

fn store(out: *mut *mut MfgSolution, sol: MfgSolution) -> Result<(), MfgStatus> {
    // SAFETY: `out` was checked for null by the caller.
    unsafe { *out = Box::into_raw(Box::new(sol)) };
    Ok(())
}

/// Default solver settings.
#[no_mangle]
pub extern "C" fn mfg_solver_options_default() -> MfgSolverOptions {
    let d = SolverConfig::default();
    MfgSolverOptions {
        tol_fixed_point: d.tol_fixed_point,
        max_iterations: d.max_iterations as u32,
        damping: d.damping,
        tol_shoot_zeta: d.tol_shoot_zeta,
        infinite_step: d.infinite_step,
        extension: d.extension,
    }
}

/// Writes the long-run capacity `y_inf` to `out`.
///
/// # Safety
/// `params` must be null or valid; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn mfg_steady_state(params: *const MfgParams, out: *mut f64) -> MfgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let y = steady_state(&model(params)?).map_err(fail)?;
        // SAFETY: checked above.
        unsafe { *out = y };
        Ok(())
    })
}

/// Finite-horizon equilibrium on `n_steps` uniform steps over `[0, t_end]`
/// for initial mean `x0`. `options` may be null.
///
/// # Safety
/// Pointers must be null or valid; on success `*out` owns a new handle.
#[no_mangle]
pub unsafe extern "C" fn mfg_solve_finite(
    params: *const MfgParams,
    x0: f64,
    t_end: f64,
    n_steps: usize,
    options: *const MfgSolverOptions,
    out: *mut *mut MfgSolution,
) -> MfgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = model(params)?;
        let cfg = solver(options)?;
        let grid = TimeGrid::new(t_end, n_steps).map_err(fail)?;
        let (inner, _) = solve_equilibrium_finite_at_mean(&p, x0, &grid, &cfg).map_err(fail)?;
        store(out, MfgSolution { params: p, x0, inner })
    })
}

/// Infinite-horizon equilibrium reported on `[0, s_max]`. `options` may be null.
///
/// # Safety
/// Pointers must be null or valid; on success `*out` owns a new handle.
#[no_mangle]
pub unsafe extern "C" fn mfg_solve_infinite(
    params: *const MfgParams,
    x0: f64,
    s_max: f64,
    options: *const MfgSolverOptions,
    out: *mut *mut MfgSolution,
) -> MfgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = model(params)?;
        let cfg = solver(options)?;
        let (inner, _) = shoot_equilibrium_infinite_at_mean(&p, x0, s_max, &cfg).map_err(fail)?;
        store(out, MfgSolution { params: p, x0, inner })
    })
}

/// Number of grid points, or 0 for a null handle.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mfg_solution_len(sol: *const MfgSolution) -> usize {
    // SAFETY: caller contract.
    unsafe { sol.as_ref() }.map_or(0, |s| s.inner.q_hat.len())
}

/// Copies one series into `buf`, which must hold `mfg_solution_len` values.
///
/// # Safety
/// `sol` must be null or live; `buf` must be null or valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_solution_copy(
    sol: *const MfgSolution,
    series: MfgSeries,
    buf: *mut f64,
    cap: usize,
) -> MfgStatus {
    guard(|| {
        // SAFETY: caller contract.
        let s = unsafe { sol.as_ref() }.ok_or_else(|| null("solution"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let n = s.inner.q_hat.len();
        if cap < n {
            set_error(format!("buffer holds {cap} values, {n} needed"));
            return Err(MfgStatus::BufferTooSmall);
        }
        // SAFETY: `buf` is valid for `cap >= n` writes.
        let dst = unsafe { std::slice::from_raw_parts_mut(buf, n) };
        match series {
            MfgSeries::Time => dst
                .iter_mut()
                .zip(s.inner.q_hat.grid().points())
                .for_each(|(d, t)| *d = t),
            MfgSeries::Z => dst.copy_from_slice(s.inner.z.values()),
            MfgSeries::QHat => dst.copy_from_slice(s.inner.q_hat.values()),
            MfgSeries::UHat => dst.copy_from_slice(s.inner.u_hat.values()),
        }
        Ok(())
    })
}

/// Value of an agent starting at the population mean.
///
/// # Safety
/// `sol` must be null or live; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn mfg_solution_value(sol: *const MfgSolution, out: *mut f64) -> MfgStatus {
    guard(|| {
        // SAFETY: caller contract.
        let s = unsafe { sol.as_ref() }.ok_or_else(|| null("solution"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: checked above.
        unsafe { *out = s.inner.value_at_mean };
        Ok(())
    })
}

/// Sup-norm residual of the equilibrium equation.
///
/// # Safety
/// `sol` must be null or live; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn mfg_solution_residual(sol: *const MfgSolution, out: *mut f64) -> MfgStatus {
    guard(|| {
        // SAFETY: caller contract.
        let s = unsafe { sol.as_ref() }.ok_or_else(|| null("solution"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: checked above.
        unsafe { *out = s.inner.residual_sup };
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `sol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfg_solution_free(sol: *mut MfgSolution) {
    if !sol.is_null() {
        // SAFETY: the handle came from `Box::into_raw` and is freed once.
        drop(unsafe { Box::from_raw(sol) });
    }
}

/// Monte Carlo mean and standard deviation of capacity under the stored
/// control, with volatility `sigma` and every agent starting at `x0`.
/// Either output may be null.
///
/// # Safety
/// `sol` must be null or live; non-null buffers must be valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_simulate_mean(
    sol: *const MfgSolution,
    sigma: f64,
    n_paths: usize,
    seed: u64,
    mean_out: *mut f64,
    std_out: *mut f64,
    cap: usize,
) -> MfgStatus {
    guard(|| {
        // SAFETY: caller contract.
        let s = unsafe { sol.as_ref() }.ok_or_else(|| null("solution"))?;
        let n = s.inner.u_hat.len();
        if cap < n {
            set_error(format!("buffer holds {cap} values, {n} needed"));
            return Err(MfgStatus::BufferTooSmall);
        }
        let p = s.params.with_sigma(sigma);
        p.validate().map_err(fail)?;
        let init = InitialDistribution::PointMass(s.x0);
        let ens = simulate_paths(&p, &s.inner.u_hat, &init, n_paths, seed, 0).map_err(fail)?;
        for (ptr, src) in [(mean_out, &ens.mean_path), (std_out, &ens.std_path)] {
            if !ptr.is_null() {
                // SAFETY: valid for `cap >= n` writes.
                unsafe { std::slice::from_raw_parts_mut(ptr, n) }.copy_from_slice(src.values());
            }
        }
        Ok(())
    })
}

/// Copies the last error of this thread, NUL-terminated and truncated to
/// fit, and returns the full length including the terminator. A null `buf`
/// only queries the length.
///
/// # Safety
/// `buf` must be null or valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            // SAFETY: `buf` is valid for `cap > n` writes.
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len() + 1
    })
}
