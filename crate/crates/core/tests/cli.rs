mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use opctl::model::{load_model, Channel, Network};
use opctl::pipeline::{read_lambda_csv, read_report, read_transition, RunReport};

use common::*;

fn opctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opctl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn model_arg(name: &str) -> String {
    model_path(name).display().to_string()
}

fn json_report(out: &Output) -> RunReport {
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

#[test]
fn golden_model_loads_with_paper_dimensions() {
    let m = load_model(&model_path("agv.toml")).unwrap();
    assert_eq!((m.dims.kappa, m.dims.n, m.dims.m), (3, 2, 1));
    assert_eq!((m.dims.states(), m.dims.controls(), m.modes), (9, 3, Some(3)));
    let Network::Transition { f, switching } = &m.network else {
        panic!("golden model gives F as data")
    };
    assert_eq!(f.matrix().to_string(), F_TEXT);
    assert_eq!(switching.as_ref().unwrap().to_string(), SIGMA_TEXT);
    let Some(Channel::Table(t)) = &m.channel else {
        panic!("golden model gives Λ rows")
    };
    assert_eq!(t.rows()[0], LAMBDA_1.to_vec());
    assert_eq!(t.rows()[1], LAMBDA_2.to_vec());
    assert_eq!(&m.constraints, &golden_constraints());
    assert!(m.plants[1].q_negated);
}

#[test]
fn synthesize_reports_paper_results() {
    let out = opctl(&["synthesize", "--model", &model_arg("agv.toml"), "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json_report(&out);
    let s = r.synthesis.unwrap();
    assert_eq!(s.omega, vec![1, 3, 11]);
    assert_eq!(s.invariant, vec![1, 3]);
    assert_eq!(s.core, vec![3]);
    assert_eq!(s.family_size, Some(4));
    let printed: Vec<String> = printed_laws().iter().map(|l| l.to_string()).collect();
    assert_eq!(s.laws, printed);
    assert_eq!(s.closed_loop_all_laws, Some(true));
}

#[test]
fn target_flag_overrides_restricted_core() {
    let out = opctl(&["synthesize", "--model", &model_arg("agv.toml"), "--target", "{1,3}", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let s = json_report(&out).synthesis.unwrap();
    assert_eq!(s.core, vec![1, 3]);
    let out = opctl(&["synthesize", "--model", &model_arg("agv.toml"), "--target", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_golden_model_succeeds() {
    let out = opctl(&["verify", "--model", &model_arg("agv.toml")]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("verdict     stabilizable"));
}

#[test]
fn unstabilizable_model_exits_2() {
    let out = opctl(&["verify", "--model", &model_arg("unstabilizable.toml")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("not stabilizable at bfs"));
}

#[test]
fn malformed_model_exits_3() {
    for cmd in ["compile", "verify"] {
        let out = opctl(&[cmd, "--model", &model_arg("malformed.toml")]);
        assert_eq!(out.status.code(), Some(3));
        assert!(String::from_utf8_lossy(&out.stderr).contains("rho must lie in (0,1)"));
    }
}

#[test]
fn forced_unit_thresholds_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(model_path("agv.toml"))
        .unwrap()
        .replace("restricted = [3]", "restricted = [3]\nthresholds = [1.0, 1.0]");
    let path = dir.path().join("forced.toml");
    fs::write(&path, text).unwrap();
    let out = opctl(&["synthesize", "--model", path.to_str().unwrap(), "--json"]);
    assert_eq!(out.status.code(), Some(2));
    let s = json_report(&out).synthesis.unwrap();
    assert!(s.omega.is_empty());
}

#[test]
fn no_control_model_compiles_to_square_f() {
    let out = opctl(&["compile", "--model", &model_arg("no_control.toml"), "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let c = json_report(&out).compile.unwrap();
    let f: opctl::stp::LogicalMatrix = c.transition.parse().unwrap();
    assert_eq!((f.rows(), f.ncols()), (4, 4));
    // (x1, x2) -> (x1 + x2, x2) over GF(2)
    assert_eq!(c.transition, "δ_4[1 4 3 2]");
}

#[test]
fn usage_and_io_errors() {
    assert_eq!(opctl(&["frobnicate", "--model", "x"]).status.code(), Some(3));
    assert_eq!(opctl(&["compile"]).status.code(), Some(3));
    assert_eq!(opctl(&["--help"]).status.code(), Some(0));
    let out = opctl(&["compile", "--model", "/nonexistent/model.toml"]);
    assert_eq!(out.status.code(), Some(1));
    let out = opctl(&["synthesize", "--model", &model_arg("agv.toml"), "--target", "x"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(model_path("agv.toml"))
        .unwrap()
        .replace("horizon = 50", "horizon = 50\nhorizn = 5");
    let path = dir.path().join("typo.toml");
    fs::write(&path, text).unwrap();
    let out = opctl(&["compile", "--model", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizn"));
}

fn read_dir_report(dir: &Path) -> RunReport {
    read_report(&dir.join("report.json")).unwrap()
}

#[test]
fn artifacts_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = opctl(&[
        "synthesize",
        "--model",
        &model_arg("agv.toml"),
        "--out",
        dir.path().to_str().unwrap(),
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let printed = json_report(&out);
    assert_eq!(read_dir_report(dir.path()), printed);
    let f = read_transition(&dir.path().join("transition.txt"), 3).unwrap();
    assert_eq!(f, golden_transition());
    let lambda = read_lambda_csv(&dir.path().join("lambda.csv")).unwrap();
    assert_eq!(lambda.rows(), &[LAMBDA_1.to_vec(), LAMBDA_2.to_vec()]);
    let gains = fs::read_to_string(dir.path().join("gains.csv")).unwrap();
    assert!(gains.starts_with("state,options,canonical\n1,2,2\n2,1;2,1\n"));
}

#[test]
fn simulation_is_reproducible_per_seed() {
    let run = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = opctl(&[
            "simulate",
            "--model",
            &model_arg("no_control.toml"),
            "--out",
            dir.path().to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert_eq!(out.status.code(), Some(0));
        let traces = fs::read_to_string(dir.path().join("traces.csv")).unwrap();
        (traces, read_dir_report(dir.path()))
    };
    let (a, ra) = run("11");
    let (b, rb) = run("11");
    let (c, _) = run("12");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(ra.simulation, rb.simulation);
    // header + (K + 1) rows × R replications × |C_β| initial states × 1 plant
    assert_eq!(a.lines().count(), 1 + 21 * 10 * 4);
}
