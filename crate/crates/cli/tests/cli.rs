use std::path::{Path, PathBuf};

use nlfit_cli::{main_with, parse_args, read_csv, CliError, Command};
use nlfit_core::data::ParamVector;
use nlfit_core::models::Model;
use nlfit_core::solvers::{gauss_newton, SolverOptions};
use serde_json::Value;
use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn nlfit_env(args: &[&str], threads: Option<&str>) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("nlfit").chain(args.iter().copied());
    let code = main_with(argv, threads, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn nlfit(args: &[&str]) -> Run {
    nlfit_env(args, None)
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn noiseless_mm(dir: &TempDir) -> PathBuf {
    let mut body = String::from("x,y\n");
    for i in 1..=12 {
        let x = i as f64 * 0.75;
        body.push_str(&format!("{x},{}\n", 6.0 * x / (5.0 + x)));
    }
    write(dir, "mm.csv", &body)
}

fn noisy_mm(dir: &TempDir) -> PathBuf {
    let r = nlfit(&["simulate", "--generator", "mm-normal", "--n", "40", "--seed", "3"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    write(dir, "noisy.csv", &r.stdout)
}

fn error_json(r: &Run) -> Value {
    serde_json::from_str(r.stderr.trim()).unwrap()
}

#[test]
fn fit_config_is_parsed() {
    let cfg = parse_args(["nlfit", "fit", "--model", "michaelis_menten", "--init", "50,0.1", "--data", "d.csv"]).unwrap();
    assert_eq!(cfg.command, Command::Fit);
    assert_eq!(cfg.model, Some(Model::MichaelisMenten));
    assert_eq!(cfg.init.unwrap().as_slice(), &[50.0, 0.1]);
    assert_eq!(cfg.alpha, 0.05);
}

#[test]
fn usage_errors_name_the_flag() {
    match parse_args(["nlfit", "fit", "--model", "michaelis_menten", "--init", "1", "--data", "d.csv"]) {
        Err(CliError::Usage { flag, message }) => {
            assert_eq!(flag, "--init");
            assert_eq!(message, "init length 1, model requires 2");
        }
        other => panic!("{other:?}"),
    }
    let r = nlfit(&["region", "--alpha", "1.5", "--model", "michaelis_menten", "--init", "6,5", "--data", "d.csv"]);
    assert_eq!(r.code, 2);
    assert_eq!(error_json(&r)["flag"], "--alpha");

    for bad in [
        vec!["fit", "--model", "no_such_model", "--init", "1,2", "--data", "d.csv"],
        vec!["fit", "--model", "michaelis_menten", "--init", "1,x", "--data", "d.csv"],
        vec!["fit", "--bogus"],
        vec!["nonsense"],
        vec!["smooth", "--data", "d.csv", "--bandwidth", "-1"],
        vec!["glm", "--data", "d.csv", "--family", "weird"],
        vec!["table1", "--seed", "7", "--format", "csv"],
    ] {
        let r = nlfit(&bad);
        assert_eq!(r.code, 2, "{bad:?}: {}", r.stderr);
        assert_eq!(error_json(&r)["error"], "usage");
    }
}

#[test]
fn seeded_commands_require_a_seed() {
    for cmd in [
        vec!["table1"],
        vec!["figure1"],
        vec!["coverage"],
        vec!["simulate"],
        vec!["bayes", "--data", "d.csv", "--model", "linear", "--init", "0,0"],
    ] {
        let r = nlfit(&cmd);
        assert_eq!(r.code, 2, "{cmd:?}");
        assert_eq!(error_json(&r)["flag"], "--seed");
    }
}

#[test]
fn help_and_bad_thread_count() {
    let r = nlfit(&["--help"]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.contains("last column is the response"));
    let r = nlfit_env(&["simulate", "--seed", "1"], Some("0"));
    assert_eq!(r.code, 2);
    assert_eq!(error_json(&r)["flag"], "NLFIT_THREADS");
}

#[test]
fn read_csv_examples() {
    let dir = TempDir::new().unwrap();
    let d = read_csv(&write(&dir, "a.csv", "x,y\n1,2\n3,4\n")).unwrap();
    assert_eq!((d.n(), d.k()), (2, 1));
    match read_csv(&write(&dir, "b.csv", "x,y\n1,2\n3,oops\n")) {
        Err(CliError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    match read_csv(&write(&dir, "c.csv", "x,y\n")) {
        Err(CliError::Io(m)) => assert_eq!(m, "no observations"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(read_csv(&dir.path().join("missing.csv")), Err(CliError::Io(_))));

    let r = nlfit(&["fit", "--model", "linear", "--init", "0,0", "--data", s(&dir.path().join("b.csv"))]);
    assert_eq!(r.code, 1);
    assert_eq!(error_json(&r)["line"], 3);
}

#[test]
fn noiseless_fit_recovers_parameters() {
    let dir = TempDir::new().unwrap();
    let data = noiseless_mm(&dir);
    for solver in ["gn", "nr", "lm"] {
        let r = nlfit(&["fit", "--model", "michaelis_menten", "--init", "4,3", "--data", s(&data), "--solver", solver]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        let v: Value = serde_json::from_str(&r.stdout).unwrap();
        let th: Vec<f64> = serde_json::from_value(v["theta_hat"].clone()).unwrap();
        assert!((th[0] - 6.0).abs() < 1e-8 && (th[1] - 5.0).abs() < 1e-8, "{solver}: {th:?}");
        assert_eq!(v["status"], "converged");
    }
}

#[test]
fn fit_report_round_trips_bits() {
    let dir = TempDir::new().unwrap();
    let data = noisy_mm(&dir);
    let r = nlfit(&["fit", "--model", "michaelis_menten", "--init", "6,5", "--data", s(&data)]);
    assert_eq!(r.code, 0);
    let v: Value = serde_json::from_str(&r.stdout).unwrap();
    let th: Vec<f64> = serde_json::from_value(v["theta_hat"].clone()).unwrap();
    let d = read_csv(&data).unwrap();
    let fit = gauss_newton(&Model::MichaelisMenten, &d, &ParamVector::new(vec![6.0, 5.0]).unwrap(), &SolverOptions::default()).unwrap();
    for j in 0..2 {
        assert_eq!(th[j].to_bits(), fit.theta_hat[j].to_bits());
    }
    let s_value: f64 = serde_json::from_value(v["s_value"].clone()).unwrap();
    assert_eq!(s_value.to_bits(), fit.s_value.to_bits());

    // The simulated CSV itself round-trips too.
    let again = nlfit(&["simulate", "--generator", "mm-normal", "--n", "40", "--seed", "3", "--format", "json"]);
    let sim: Value = serde_json::from_str(&again.stdout).unwrap();
    let ys: Vec<f64> = serde_json::from_value(sim["y"].clone()).unwrap();
    assert!(ys.iter().zip(d.y()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn fit_csv_table() {
    let dir = TempDir::new().unwrap();
    let data = noisy_mm(&dir);
    let r = nlfit(&["fit", "--model", "michaelis_menten", "--init", "6,5", "--data", s(&data), "--format", "csv"]);
    let lines: Vec<&str> = r.stdout.lines().collect();
    assert_eq!(lines[0], "parameter,estimate,std_error,lower,upper");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("theta1,"));
}

#[test]
fn three_parameter_region_needs_membership_only() {
    let dir = TempDir::new().unwrap();
    let mut body = String::from("x,y\n");
    for i in 0..20 {
        let x = 0.5 * i as f64;
        let wobble = 0.05 * ((i * 7 % 5) as f64 - 2.0);
        body.push_str(&format!("{x},{}\n", 8.0 - 6.0 * (-0.4 * x).exp() + wobble));
    }
    let data = write(&dir, "asym.csv", &body);
    let base = ["region", "--kind", "likelihood", "--model", "asymptotic", "--init", "8,2,0.4", "--data", s(&data)];
    let r = nlfit(&base);
    assert_eq!(r.code, 1);
    assert_eq!(error_json(&r)["message"], "invalid input: boundary grid requires p=2");

    let mut args = base.to_vec();
    args.extend(["--membership-only", "--point", "8,2,0.4"]);
    let r = nlfit(&args);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v: Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["p"], 3);
    assert_eq!(v["points"].as_array().unwrap().len(), 1);
}

#[test]
fn region_grid_csv_layout() {
    let dir = TempDir::new().unwrap();
    let data = noisy_mm(&dir);
    for kind in ["wald", "likelihood"] {
        let r = nlfit(&["region", "--kind", kind, "--model", "michaelis_menten", "--init", "6,5", "--data", s(&data), "--grid", "81"]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        let mut lines = r.stdout.lines();
        let meta: Value = serde_json::from_str(lines.next().unwrap().strip_prefix("# ").unwrap()).unwrap();
        assert_eq!(meta["kind"], kind);
        assert_eq!(lines.next().unwrap(), "theta1,theta2");
        let pts: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
        assert_eq!(pts.len() as u64, meta["boundary_points"].as_u64().unwrap());
        assert!(pts.iter().all(|p| p.len() == 2));
        assert_eq!(meta["touches_border"], false);
    }
}

#[test]
fn computation_failure_is_json_on_stderr() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "neg.csv", "x,y\n1,-1\n2,0\n3,2\n4,1\n");
    let r = nlfit(&["glm", "--data", s(&data), "--family", "poisson"]);
    assert_eq!(r.code, 1);
    let e = error_json(&r);
    assert_eq!(e["error"], "computation");
    assert!(e["message"].as_str().unwrap().contains("nonnegative"));
    assert!(r.stdout.is_empty());
}

#[test]
fn glm_reports_named_coefficients() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "pois.csv", "dose,count\n0,1\n1,2\n2,2\n3,5\n4,7\n5,11\n");
    let r = nlfit(&["glm", "--data", s(&data), "--family", "poisson"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v: Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["coefficients"], serde_json::json!(["(intercept)", "dose"]));
    assert_eq!(v["link"], "log");
    let mu: Vec<f64> = serde_json::from_value(v["mu"].clone()).unwrap();
    assert!((mu.iter().sum::<f64>() - 28.0).abs() < 1e-8);
}

#[test]
fn smooth_keeps_constants_and_order() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "c.csv", "x,y\n0,3\n1,3\n2.5,3\n4,3\n");
    let r = nlfit(&["smooth", "--data", s(&data), "--bandwidth", "1.5", "--queries", "3,0.5,2"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let lines: Vec<&str> = r.stdout.lines().collect();
    assert_eq!(lines, ["query_x,estimate", "3,3", "0.5,3", "2,3"]);
}

#[test]
fn bayes_writes_summary_and_chain() {
    let dir = TempDir::new().unwrap();
    let data = noisy_mm(&dir);
    let chain = dir.path().join("chain.csv");
    let r = nlfit(&[
        "bayes", "--data", s(&data), "--model", "michaelis_menten", "--init", "6,5", "--seed", "4",
        "--iterations", "3000", "--burn-in", "500", "--chain", s(&chain),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v: Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["summary"]["samples"], 2500);
    let body = std::fs::read_to_string(&chain).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next().unwrap(), "iteration,theta1,theta2,sigma,log_post");
    assert_eq!(lines.count(), 3000);
}

#[test]
fn output_file_matches_stdout() {
    let dir = TempDir::new().unwrap();
    let target = dir.path().join("sim.csv");
    let a = nlfit(&["simulate", "--seed", "9", "--n", "12"]);
    let b = nlfit(&["simulate", "--seed", "9", "--n", "12", "--output", s(&target)]);
    assert_eq!(b.code, 0);
    assert!(b.stdout.is_empty());
    assert_eq!(std::fs::read_to_string(&target).unwrap(), a.stdout);
}

#[test]
fn thread_count_does_not_change_output() {
    for args in [
        vec!["coverage", "--seed", "5", "--reps", "100", "--n", "30"],
        vec!["figure1", "--seed", "2", "--n", "50"],
    ] {
        let one = nlfit_env(&args, Some("1"));
        let four = nlfit_env(&args, Some("4"));
        assert_eq!(one.code, 0, "{}", one.stderr);
        assert_eq!(one.stdout, four.stdout, "{args:?}");
    }
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_nlfit");
    let ok = std::process::Command::new(bin).args(["simulate", "--seed", "1", "--n", "5"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(String::from_utf8(ok.stdout).unwrap().lines().count(), 6);
    let usage = std::process::Command::new(bin).args(["simulate"]).output().unwrap();
    assert_eq!(usage.status.code(), Some(2));
    let fail = std::process::Command::new(bin)
        .args(["fit", "--model", "linear", "--init", "0,0", "--data", "/nonexistent/file.csv"])
        .output()
        .unwrap();
    assert_eq!(fail.status.code(), Some(1));
    let e: Value = serde_json::from_slice(&fail.stderr).unwrap();
    assert_eq!(e["error"], "io");
}
