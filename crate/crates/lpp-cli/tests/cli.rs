use std::path::Path;
use std::process::{Command, Output};

fn lpp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpp"))
        .args(args)
        .env_remove("LPP_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Header and data rows of a CSV artifact, provenance lines dropped.
fn rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let data = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, data)
}

fn column(text: &str, name: &str) -> Vec<String> {
    let (header, data) = rows(text);
    let k = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    data.into_iter().map(|r| r[k].clone()).collect()
}

fn numbers(text: &str, name: &str) -> Vec<f64> {
    column(text, name).iter().map(|v| v.parse().unwrap()).collect()
}

fn lookup(text: &str, key: &str) -> f64 {
    let (_, data) = rows(text);
    data.iter().find(|r| r[0] == key).unwrap()[1].parse().unwrap()
}

#[test]
fn constants_at_the_reference_point() {
    let text = stdout(&lpp(&["constants"]));
    assert_eq!(lookup(&text, "D"), 5.0);
    assert!((lookup(&text, "c_plus") - 1.0).abs() < 1e-15);
    assert!((lookup(&text, "c_minus") - 1.0).abs() < 1e-15);
    assert!((lookup(&text, "j_rate") - 0.311_220_677_261_375_9).abs() < 1e-12);
}

#[test]
fn constants_with_a_point_pair_report_region_and_saddles() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    stdout(&lpp(&["constants", "--set", "geometry.points=0.7,0.3;0.9,0.4", "--out", out]));
    let crit = std::fs::read_to_string(dir.path().join("critical_points.csv")).unwrap();
    assert!(column(&crit, "region").iter().all(|r| r == "R4"));
    assert_eq!(column(&crit, "exponent").len(), 6);
    assert!(dir.path().join("surface.csv").exists());
}

#[test]
fn unit_corner_density_is_the_exponential_law() {
    let text = stdout(&lpp(&["density", "--set", "geometry.t=0:4:0.25"]));
    let t = numbers(&text, "t");
    let dens = numbers(&text, "density");
    let tail = numbers(&text, "tail");
    for k in 0..t.len() {
        assert!((dens[k] - (-t[k]).exp()).abs() < 1e-8 * (-t[k]).exp(), "t = {}", t[k]);
    }
    assert!((tail[0] - 1.0).abs() < 1e-6);
}

#[test]
fn transposed_corner_gives_identical_values() {
    let grid = "geometry.t=0.5:6:0.5";
    let a = stdout(&lpp(&["density", "--set", "geometry.m=3", "--set", "geometry.n=2", "--set", grid]));
    let b = stdout(&lpp(&["density", "--set", "geometry.m=2", "--set", "geometry.n=3", "--set", grid]));
    assert_eq!(column(&a, "density"), column(&b, "density"));
    assert_eq!(column(&a, "tail"), column(&b, "tail"));
}

#[test]
fn default_identity_run_passes_with_node_spread() {
    let text = stdout(&lpp(&["identity-check"]));
    assert!(column(&text, "passed").iter().all(|p| p == "true"));
    assert!(numbers(&text, "residual").iter().all(|&r| r < 1e-4));
    assert!(numbers(&text, "node_spread").iter().all(|s| s.is_finite()));
}

#[test]
fn broken_radii_fail_before_writing_anything() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = lpp(&[
        "identity-check",
        "--set",
        "numeric.radii=geometric:0.2:2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("nesting"));
    assert!(!out.exists());
}

#[test]
fn validation_errors_exit_with_two() {
    for args in [
        vec!["constants", "--set", "model.ell=3"],
        vec!["constants", "--set", "model.colour=3"],
        vec!["density", "--set", "geometry.t=-1"],
        vec!["limit", "--set", "numeric.kind=sideways"],
        vec!["constants", "--threads", "0"],
    ] {
        assert_eq!(lpp(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn exhausted_budget_exits_with_four() {
    let res = lpp(&[
        "simulate",
        "--set",
        "numeric.mode=conditional",
        "--set",
        "numeric.budget=100",
    ]);
    assert_eq!(res.status.code(), Some(4));
}

#[test]
fn fixed_seed_reproduces_sample_csv() {
    let a = stdout(&lpp(&["simulate", "--seed", "11", "--set", "numeric.samples=200"]));
    let b = stdout(&lpp(&["simulate", "--seed", "11", "--set", "numeric.samples=200"]));
    let c = stdout(&lpp(&["simulate", "--seed", "12", "--set", "numeric.samples=200"]));
    assert_eq!(a, b);
    assert_ne!(rows(&a).1, rows(&c).1);
    assert!(a.contains("# seed = 11"));
}

#[test]
fn unconditional_corner_mean_sits_below_four() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    stdout(&lpp(&["simulate", "--out", out]));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let mean = summary["data"]["mean_lp_per_row"].as_f64().unwrap();
    assert!(mean < 4.0 && mean > 3.0, "mean {mean}");
    assert_eq!(summary["seed"].as_u64(), Some(1));
}

#[test]
fn conditional_run_echoes_the_rate_reference() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    stdout(&lpp(&[
        "simulate",
        "--set",
        "numeric.mode=conditional",
        "--set",
        "numeric.l=8",
        "--set",
        "numeric.samples=10",
        "--out",
        out,
    ]));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let data = &summary["data"];
    let reference = data["rate_reference"].as_f64().unwrap();
    assert!((reference - (-0.311_220_677_261_375_9f64 * 8.0).exp()).abs() < 1e-12);
    assert_eq!(data["accepted"].as_u64(), Some(10));
    assert!(data["acceptance_rate"].as_f64().unwrap() > 0.0);
}

fn run_convergence(dir: &Path, extra: &[&str]) -> String {
    let mut args = vec!["convergence", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    stdout(&lpp(&args));
    std::fs::read_to_string(dir.join("convergence.csv")).unwrap()
}

#[test]
fn convergence_ladder_closes_in_and_round_trips() {
    let first = tempfile::tempdir().unwrap();
    let text = run_convergence(first.path(), &[]);
    let gap = numbers(&text, "gap");
    assert_eq!(gap.len(), 3);
    assert!(gap.windows(2).all(|w| w[1] < w[0]), "{gap:?}");
    let limit = column(&text, "limit");
    assert!(limit.iter().all(|v| *v == limit[0]));

    let echo = first.path().join("config.txt");
    let second = tempfile::tempdir().unwrap();
    let again = run_convergence(second.path(), &["--config", echo.to_str().unwrap()]);
    assert_eq!(text, again);
}

#[test]
fn limit_kinds_agree_with_closed_forms() {
    let off = stdout(&lpp(&["limit"]));
    let v = numbers(&off, "value")[0];
    assert!(v > 0.0 && v < 0.5);
    let bridge = stdout(&lpp(&[
        "limit",
        "--set",
        "numeric.kind=bridge",
        "--set",
        "geometry.times=0.5",
        "--set",
        "geometry.thresholds=0",
    ]));
    assert!((numbers(&bridge, "value")[0] - 0.5).abs() < 1e-14);
    let diag = stdout(&lpp(&[
        "limit",
        "--set",
        "numeric.kind=diag",
        "--set",
        "geometry.shifts=0",
        "--set",
        "geometry.times=0.5",
        "--set",
        "geometry.thresholds=0",
    ]));
    assert!((numbers(&diag, "value")[0] - 0.25).abs() < 1e-14);
}

#[test]
fn json_output_carries_provenance() {
    let out = stdout(&lpp(&["constants", "--format", "json"]));
    let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(doc["defaults"], "numeric-defaults-1");
    assert_eq!(doc["config"]["model.ell"], "5");
    assert_eq!(doc["columns"][0], "name");
    assert_eq!(doc["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn thread_variable_is_honoured() {
    let out = Command::new(env!("CARGO_BIN_EXE_lpp"))
        .args(["constants"])
        .env("LPP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_lpp"))
        .args(["constants"])
        .env("LPP_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
}
