use std::ffi::CStr;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use mfg_capacity_ffi::*;

fn reference_params() -> MfgParams {
    MfgParams { rho: 0.03, delta: 0.01, beta: 2.0, sigma: 0.1 }
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe { mfg_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn steady_state_matches_core() {
    let mut y = 0.0;
    assert_eq!(unsafe { mfg_steady_state(&reference_params(), &mut y) }, MfgStatus::Ok);
    let core = mfg_capacity::steady_state(&mfg_capacity::ModelParams::reference(0.1)).unwrap();
    assert_eq!(y, core);
}

#[test]
fn finite_solution_round_trip() {
    let mut sol = ptr::null_mut();
    let st = unsafe { mfg_solve_finite(&reference_params(), 10.0, 30.0, 600, ptr::null(), &mut sol) };
    assert_eq!(st, MfgStatus::Ok);
    let n = unsafe { mfg_solution_len(sol) };
    assert_eq!(n, 601);
    let mut t = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut u = vec![0.0; n];
    unsafe {
        assert_eq!(mfg_solution_copy(sol, MfgSeries::Time, t.as_mut_ptr(), n), MfgStatus::Ok);
        assert_eq!(mfg_solution_copy(sol, MfgSeries::QHat, q.as_mut_ptr(), n), MfgStatus::Ok);
        assert_eq!(mfg_solution_copy(sol, MfgSeries::UHat, u.as_mut_ptr(), n), MfgStatus::Ok);
    }
    assert_eq!(t[n - 1], 30.0);
    assert_eq!(q[0], 10.0);
    assert_eq!(u[n - 1], 0.0);

    let grid = mfg_capacity::TimeGrid::new(30.0, 600).unwrap();
    let (core, _) = mfg_capacity::finite::solve_equilibrium_finite_at_mean(
        &mfg_capacity::ModelParams::reference(0.1),
        10.0,
        &grid,
        &mfg_capacity::SolverConfig::default(),
    )
    .unwrap();
    assert_eq!(q, core.q_hat.values());

    let (mut v, mut r) = (0.0, 0.0);
    unsafe {
        assert_eq!(mfg_solution_value(sol, &mut v), MfgStatus::Ok);
        assert_eq!(mfg_solution_residual(sol, &mut r), MfgStatus::Ok);
    }
    assert_eq!(v, core.value_at_mean);
    assert!(r < 1e-8);

    let mut small = vec![0.0; n - 1];
    let st = unsafe { mfg_solution_copy(sol, MfgSeries::Z, small.as_mut_ptr(), n - 1) };
    assert_eq!(st, MfgStatus::BufferTooSmall);
    assert!(last_error().contains("needed"));
    unsafe { mfg_solution_free(sol) };
}

#[test]
fn simulation_through_handle() {
    let mut sol = ptr::null_mut();
    unsafe { mfg_solve_finite(&reference_params(), 10.0, 10.0, 100, ptr::null(), &mut sol) };
    let n = unsafe { mfg_solution_len(sol) };
    let mut q = vec![0.0; n];
    let mut mean = vec![0.0; n];
    let mut sd = vec![0.0; n];
    unsafe {
        mfg_solution_copy(sol, MfgSeries::QHat, q.as_mut_ptr(), n);
        let st = mfg_simulate_mean(sol, 0.0, 64, 7, mean.as_mut_ptr(), sd.as_mut_ptr(), n);
        assert_eq!(st, MfgStatus::Ok);
        mfg_solution_free(sol);
    }
    for k in 0..n {
        assert!((mean[k] - q[k]).abs() < 1e-10 * q[k]);
        assert!(sd[k] < 1e-9);
    }
}

#[test]
fn infinite_horizon_status_codes() {
    let mut sol = ptr::null_mut();
    let st = unsafe { mfg_solve_infinite(&reference_params(), 10.0, 300.0, ptr::null(), &mut sol) };
    assert_eq!(st, MfgStatus::Ok);
    let mut r = 0.0;
    unsafe { mfg_solution_residual(sol, &mut r) };
    assert!(r < 1e-6);
    unsafe { mfg_solution_free(sol) };

    let bad = MfgParams { beta: 5.0, ..reference_params() };
    let mut sol = ptr::null_mut();
    let st = unsafe { mfg_solve_infinite(&bad, 10.0, 300.0, ptr::null(), &mut sol) };
    assert_eq!(st, MfgStatus::HorizonCondition);
    assert!(sol.is_null());
    assert!(last_error().contains("horizon"));
}

#[test]
fn invalid_inputs() {
    let mut y = 0.0;
    assert_eq!(unsafe { mfg_steady_state(ptr::null(), &mut y) }, MfgStatus::NullPointer);
    assert_eq!(unsafe { mfg_steady_state(&reference_params(), ptr::null_mut()) }, MfgStatus::NullPointer);
    let neg = MfgParams { rho: -1.0, ..reference_params() };
    assert_eq!(unsafe { mfg_steady_state(&neg, &mut y) }, MfgStatus::InvalidParams);
    assert_eq!(unsafe { mfg_solution_len(ptr::null()) }, 0);
    unsafe { mfg_solution_free(ptr::null_mut()) };

    let mut opts = mfg_solver_options_default();
    opts.tol_fixed_point = 1e-30;
    opts.max_iterations = 5;
    let mut sol = ptr::null_mut();
    let st = unsafe { mfg_solve_finite(&reference_params(), 10.0, 30.0, 600, &opts, &mut sol) };
    assert_eq!(st, MfgStatus::Convergence);
    assert!(sol.is_null());
}

#[test]
fn error_message_truncation() {
    let mut y = 0.0;
    unsafe { mfg_steady_state(ptr::null(), &mut y) };
    let full = unsafe { mfg_last_error_message(ptr::null_mut(), 0) };
    assert_eq!(full, "params is null".len() + 1);
    let mut buf = [1 as std::ffi::c_char; 4];
    unsafe { mfg_last_error_message(buf.as_mut_ptr(), 4) };
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), "par");
}

fn find_staticlib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let deps = exe.parent()?;
    [deps.parent()?, deps]
        .iter()
        .map(|d| d.join("libmfg_capacity_ffi.a"))
        .find(|p| p.exists())
}

#[test]
fn c_program_links_against_header() {
    let header_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(header_dir.join("mfg_capacity.h").exists());
    let Some(lib) = find_staticlib() else {
        eprintln!("static library not found; skipping C link test");
        return;
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping C link test");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "mfg_capacity.h"
int main(void) {
    MfgParams p = {0.03, 0.01, 2.0, 0.1};
    double y = 0.0;
    if (mfg_steady_state(&p, &y) != MFG_STATUS_OK) return 1;
    MfgSolution *sol = NULL;
    if (mfg_solve_finite(&p, 10.0, 30.0, 600, NULL, &sol) != MFG_STATUS_OK) return 2;
    double q[601];
    if (mfg_solution_copy(sol, MFG_SERIES_Q_HAT, q, 601) != MFG_STATUS_OK) return 3;
    mfg_solution_free(sol);
    p.beta = 5.0;
    if (mfg_solve_infinite(&p, 10.0, 300.0, NULL, &sol) != MFG_STATUS_HORIZON_CONDITION) return 4;
    printf("%.17g %.17g\n", y, q[600]);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status);
    let text = String::from_utf8(out.stdout).unwrap();
    let y: f64 = text.split_whitespace().next().unwrap().parse().unwrap();
    assert!((y - 13.5721).abs() < 1e-4);
}
