use std::path::Path;
use std::process::{Command, Output};

use mfg_capacity::finite::solve_equilibrium_finite_at_mean;
use mfg_capacity::output::read_csv;
use mfg_capacity::{ModelParams, SolverConfig, TimeGrid};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfg-capacity")).args(args).output().unwrap()
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut all = args.to_vec();
    all.extend(["--out", out]);
    run(&all)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn steady_state_prints_root() {
    let o = run(&["steady-state"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let y: f64 = text
        .trim()
        .strip_prefix("y_inf=")
        .and_then(|r| r.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((y - 13.5721).abs() < 5e-4);
}

#[test]
fn solve_csv_round_trips_to_library_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["solve", "--horizon", "finite:30", "--x0", "10", "--steps", "600"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = read_csv(&dir.path().join("equilibrium.csv")).unwrap();
    assert_eq!(table.headers, ["s", "z", "q_hat", "u_hat", "lower_bound", "upper_bound"]);
    let grid = TimeGrid::new(30.0, 600).unwrap();
    let (sol, _) =
        solve_equilibrium_finite_at_mean(&ModelParams::reference(0.1), 10.0, &grid, &SolverConfig::default()).unwrap();
    assert_eq!(table.column("q_hat").unwrap(), sol.q_hat.values());
    assert_eq!(table.column("u_hat").unwrap(), sol.u_hat.values());
    let q = table.column("q_hat").unwrap();
    let lo = table.column("lower_bound").unwrap();
    let hi = table.column("upper_bound").unwrap();
    assert!((0..q.len()).all(|k| lo[k] <= q[k] && q[k] <= hi[k]));
    let summary = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(summary.contains("\"value_at_mean\""));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["simulate", "--horizon", "finite:10", "--paths", "2000", "--sigmas", "0.1", "--seed", "11"];
    for d in [&a, &b] {
        assert_eq!(run_in(d.path(), &args).status.code(), Some(0));
        assert_eq!(run_in(d.path(), &["solve", "--horizon", "infinite:50"]).status.code(), Some(0));
    }
    for file in ["simulation_sigma_0.1.csv", "equilibrium.csv", "summary.json"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert_eq!(x, y, "{file} differs");
    }
    let table = read_csv(&a.path().join("simulation_sigma_0.1.csv")).unwrap();
    assert_eq!(table.headers.len(), 4 + 10);
    assert_eq!(table.headers[4], "path_1");
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# test\nbeta = 3\nrho = 0.05\n").unwrap();
    let o = run(&["steady-state", "--config", cfg.to_str().unwrap(), "--rho", "0.03"]);
    assert_eq!(o.status.code(), Some(0));
    let y: f64 = stdout(&o)
        .trim()
        .strip_prefix("y_inf=")
        .and_then(|r| r.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    let expected = (0.01f64 * 0.04).powf(-1.0 / 4.0);
    assert!((y - expected).abs() < 1e-12 * expected);
}

#[test]
fn bad_input_exits_2() {
    assert_eq!(run(&["steady-state", "--beta", "-1"]).status.code(), Some(2));
    assert_eq!(run(&["solve", "--horizon", "sideways:3"]).status.code(), Some(2));
    assert_eq!(run(&["validate", "--beta", "5", "--horizon", "infinite:300"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "gamma = 1\n").unwrap();
    assert_eq!(run(&["solve", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run_in(dir.path(), &["deterministic", "--init", "point"]).status.code(), Some(2));
}

#[test]
fn solver_failure_exits_3_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["solve", "--tol", "1e-30", "--max-iterations", "3"]);
    assert_eq!(o.status.code(), Some(3));
    let diag = std::fs::read_to_string(dir.path().join("diagnostics.json")).unwrap();
    assert!(diag.contains("residual_history"));
}

#[test]
fn validation_outcomes() {
    let ok = run(&["validate", "--paths", "4000"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("0 failed"));
    let bad = run(&["validate", "--paths", "4000", "--max-iterations", "2"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn deterministic_writes_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["deterministic", "--init", "uniform:4", "--times", "0,15"]);
    assert_eq!(o.status.code(), Some(0));
    for t in ["0", "15"] {
        let table = read_csv(&dir.path().join(format!("density_t{t}.csv"))).unwrap();
        let (x, p) = (table.column("x").unwrap(), table.column("density").unwrap());
        let mass: f64 = (1..x.len()).map(|k| 0.5 * (x[k] - x[k - 1]) * (p[k] + p[k - 1])).sum();
        assert!((mass - 1.0).abs() < 1e-6);
    }
    assert!(dir.path().join("deterministic_equilibrium.csv").exists());
}
