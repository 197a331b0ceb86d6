use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn plap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plap")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn fixtures() -> (TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let edge = write(
        dir.path(),
        "edge.json",
        r#"{"vertices":["a","b"],"edges":[{"id":"e","from":"a","to":"b","length":1.0}],"dirichlet":["a","b"]}"#,
    );
    let star = write(
        dir.path(),
        "star.json",
        r#"{"vertices":["c","l1","l2","l3"],
            "edges":[{"id":"a","from":"c","to":"l1","length":1.0},
                     {"id":"b1","from":"c","to":"l2","length":1.3},
                     {"id":"b2","from":"c","to":"l3","length":1.7}],
            "dirichlet":["l1","l2","l3"]}"#,
    );
    (dir, edge, star)
}

fn json(out: &[u8]) -> Value {
    serde_json::from_slice(out).expect("valid JSON")
}

#[test]
fn solve_unit_edge() {
    let (_d, edge, _) = fixtures();
    let out = plap(&["solve", "--graph", edge.to_str().unwrap(), "--p", "2", "--h", "1e-3"]);
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&out.stdout);
    let lambda = doc["lambda"].as_f64().unwrap();
    assert!((lambda - std::f64::consts::PI.powi(2)).abs() < 1e-4 * lambda);
    assert_eq!(doc["converged"], true);
}

#[test]
fn bounds_report() {
    let (_d, _, star) = fixtures();
    let out = plap(&["bounds", "--graph", star.to_str().unwrap(), "--p", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&out.stdout);
    let (lo, l, up) = (doc["lower"].as_f64().unwrap(), doc["lambda"].as_f64().unwrap(), doc["upper"].as_f64().unwrap());
    assert!(lo <= l && l <= up);
    assert_eq!(doc["passed"], true);
}

#[test]
fn deriv_report() {
    let (_d, _, star) = fixtures();
    let out = plap(&["deriv", "--graph", star.to_str().unwrap(), "--p", "2", "--edge", "b1", "--delta", "1e-3"]);
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&out.stdout);
    assert_eq!(doc["simple"], true);
    assert_eq!(doc["agreement"], true);
    let out = plap(&["deriv", "--graph", star.to_str().unwrap(), "--p", "2", "--edge", "zz"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out.stderr)["code"], "unknown_edge");
}

#[test]
fn limits_modes() {
    let (_d, _, star) = fixtures();
    let g = star.to_str().unwrap();
    let doc = json(&plap(&["limits", "--graph", g, "--mode", "cheeger"]).stdout);
    assert_eq!(doc["perimeter"], 3);
    assert_eq!(doc["edges"].as_array().unwrap().len(), 3);
    let doc = json(&plap(&["limits", "--graph", g, "--mode", "infty"]).stdout);
    assert!((doc["lambda_infinity"].as_f64().unwrap() - 1.0 / 1.35).abs() < 1e-11);
    assert_eq!(doc["witness"]["edge"], "b2");
    let out = plap(&["limits", "--graph", g, "--mode", "sweep", "--p-list", "1.5,4", "--h", "0.01", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("kind,p,"));
    let out = plap(&["limits", "--graph", g, "--mode", "sideways"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ptrig_tables() {
    let out = plap(&["ptrig-table", "--p-list", "2,3"]);
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&out.stdout);
    assert_eq!(doc[1]["pi_p"].as_f64().unwrap(), 2.41839915231);
    let out = plap(&["ptrig-table", "--p", "3", "--samples", "11", "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn validate_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "ok.json", r#"{"vertices":["a","b"],"edges":[{"id":"e","from":"a","to":"b","length":2}],"dirichlet":["a"]}"#);
    let out = plap(&["validate", "--graph", ok.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out.stdout)["valid"], true);
    let cases = [
        (r#"{"vertices":["a","b"],"edges":[{"id":"e","from":"a","to":"b","length":2}],"dirichlet":[]}"#, "empty_dirichlet"),
        (r#"{"vertices":["a","b","c"],"edges":[{"id":"e","from":"a","to":"b","length":2}],"dirichlet":["a"]}"#, "disconnected"),
        (r#"{"vertices":["a","b"],"edges":[{"id":"e","from":"a","to":"b","length":-1}],"dirichlet":["a"]}"#, "non_positive_length"),
        (r#"{"vertices":["a","b"],"edges":[{"id":"e","from":"a","to":"q","length":1}],"dirichlet":["a"]}"#, "unknown_vertex"),
        (r#"{"vertices":["a","b"],"#, "parse_error"),
    ];
    for (i, (text, code)) in cases.iter().enumerate() {
        let bad = write(dir.path(), &format!("bad{i}.json"), text);
        let out = plap(&["validate", "--graph", bad.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(1), "{code}");
        assert!(out.stdout.is_empty());
        assert_eq!(json(&out.stderr)["code"], *code);
    }
}

#[test]
fn missing_file_is_a_parse_error() {
    let out = plap(&["solve", "--graph", "missing.json", "--p", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out.stderr)["code"], "parse_error");
}

#[test]
fn numeric_options_are_validated() {
    let (_d, edge, _) = fixtures();
    let g = edge.to_str().unwrap();
    for args in [
        vec!["solve", "--graph", g, "--p", "1.0"],
        vec!["solve", "--graph", g, "--p", "2", "--h", "-1"],
        vec!["solve", "--graph", g, "--p", "2", "--tol", "0"],
        vec!["solve", "--graph", g, "--p", "abc"],
        vec!["deriv", "--graph", g, "--p", "2", "--edge", "e", "--delta", "0"],
    ] {
        let out = plap(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(json(&out.stderr)["code"].is_string());
    }
}

#[test]
fn help_lists_flags_and_unknown_flags_fail() {
    let out = plap(&["solve", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in ["--graph", "--p", "--h", "--tol", "--seed", "--out", "--format"] {
        assert!(text.contains(flag), "{flag}");
    }
    let text = String::from_utf8(plap(&["limits", "--help"]).stdout).unwrap();
    for flag in ["--mode", "--p-list"] {
        assert!(text.contains(flag), "{flag}");
    }
    let text = String::from_utf8(plap(&["deriv", "--help"]).stdout).unwrap();
    for flag in ["--edge", "--delta"] {
        assert!(text.contains(flag), "{flag}");
    }
    assert_eq!(plap(&["--help"]).status.code(), Some(0));
    assert_eq!(plap(&["solve", "--frobnicate"]).status.code(), Some(1));
}

#[test]
fn not_converged_exits_two_with_best_iterate() {
    let (_d, _, star) = fixtures();
    let out = plap(&["solve", "--graph", star.to_str().unwrap(), "--p", "3", "--max-iterations", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let doc = json(&out.stdout);
    assert_eq!(doc["converged"], false);
    assert!(doc["lambda"].as_f64().unwrap() > 0.0);
    assert_eq!(json(&out.stderr)["converged"], false);
}

#[test]
fn output_is_byte_identical_and_goes_to_out() {
    let (d, _, star) = fixtures();
    let g = star.to_str().unwrap();
    let args = ["solve", "--graph", g, "--p", "2.5", "--seed", "7", "--format", "csv"];
    let a = plap(&args);
    let b = plap(&args);
    assert_eq!(a.stdout, b.stdout);
    let target = d.path().join("u.csv");
    let mut with_out = args.to_vec();
    with_out.extend(["--out", target.to_str().unwrap()]);
    let c = plap(&with_out);
    assert_eq!(c.status.code(), Some(0));
    assert!(c.stdout.is_empty());
    assert_eq!(std::fs::read(&target).unwrap(), a.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("edge,x,u\n"));
}

#[test]
fn csv_is_rejected_where_unsupported() {
    let (_d, edge, _) = fixtures();
    let out = plap(&["bounds", "--graph", edge.to_str().unwrap(), "--p", "2", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out.stderr)["code"], "unsupported_format");
}
