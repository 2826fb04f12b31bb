use std::path::Path;
use std::process::{Command, Output};

fn flowcert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowcert")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn data_rows(text: &str) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

fn headers(text: &str) -> Vec<String> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    r.headers().unwrap().iter().map(str::to_string).collect()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn bounds_table_hits_the_step_only_value() {
    let o = flowcert(&["bounds", "--family", "step-only", "--alpha", "0", "--t-lo", "1", "--t-points", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(headers(&text), ["t", "init_term", "variance_term", "total"]);
    let row = &data_rows(&text)[0];
    assert!((row[2].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
    assert!(text.starts_with("# flowcert bounds"));
    assert!(text.contains("# family = \"step-only\""));
}

#[test]
fn config_file_is_merged_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[rate]\nmu_lo = 0.01\nmu_hi = 0.1\nmu_points = 2\n").unwrap();
    let out = dir.path().join("rate.csv");
    let o = flowcert(&["--config", path_str(&cfg), "rate", "--mu-points", "3", "--out", path_str(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(headers(&text), ["condition", "pep", "theory", "relative_gap"]);
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 3);
    for r in rows {
        let mu: f64 = r[0].parse().unwrap();
        let pep: f64 = r[1].parse().unwrap();
        assert!((pep / (2.0 * mu) - 1.0).abs() < 1e-3);
    }
    assert!(text.contains("# mu_points = 3"));
    assert!(text.contains("# mu_lo = 0.01"));
}

#[test]
fn reference_certificates_verify_and_tampering_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("su.json");
    let o = flowcert(&["reference", "--kind", "accelerated-flow", "--out", path_str(&cert)]);
    assert_eq!(code(&o), 0);
    let o = flowcert(&["verify", "--certificate", path_str(&cert), "--t-lo", "0.01", "--t-hi", "1000", "--t-points", "400"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["certified"], true);
    assert_eq!(report["config"]["resolved"]["t_points"], 400);

    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cert).unwrap()).unwrap();
    v["multipliers"]["lambda1"]["c"] = serde_json::json!(1.0);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, v.to_string()).unwrap();
    let o = flowcert(&["verify", "--certificate", path_str(&bad), "--t-points", "40"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn marginal_checks_have_their_own_status() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("gf.json");
    assert_eq!(code(&flowcert(&["reference", "--kind", "gradient-flow", "--out", path_str(&cert)])), 0);
    let o = flowcert(&["verify", "--certificate", path_str(&cert), "--feasibility-tol=-1", "--marginal-tol", "1"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn io_failures_have_their_own_status() {
    let o = flowcert(&["bounds", "--out", "/nonexistent-dir/x.csv"]);
    assert_eq!(code(&o), 5);
    let o = flowcert(&["verify", "--certificate", "/nonexistent-dir/c.json"]);
    assert_eq!(code(&o), 5);
}

#[test]
fn worstcase_writes_the_quadratic() {
    let o = flowcert(&["worstcase", "--mu", "0.1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next(), Some("points funcgf"));
    let samples: Vec<(f64, f64)> = lines
        .map(|l| {
            let mut it = l.split_whitespace().map(|v| v.parse::<f64>().unwrap());
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect();
    assert_eq!(samples.len(), 101);
    assert!(samples.iter().all(|(x, f)| (f - 0.05 * x * x).abs() < 1e-6));
}

#[test]
fn simulations_are_reproducible_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = flowcert(&[
            "simulate", "--dynamics", "sgd", "--alpha", "0", "--dim", "2", "--t1", "2", "--paths", "40", "--seed", "3",
            "--bound", "step-only", "--out", path_str(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let text = std::fs::read_to_string(out).unwrap();
        text.lines().filter(|l| !l.starts_with("# out")).collect::<Vec<_>>().join("\n")
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    assert_eq!(headers(&a), ["time", "f_mean", "f_stderr", "bound", "margin"]);
    assert_eq!(data_rows(&a).len(), 3);

    let o = flowcert(&["simulate", "--dynamics", "gradient-flow", "--dim", "3", "--t1", "5", "--bound", "envelope"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn mismatched_bound_is_an_error() {
    let o = flowcert(&["simulate", "--dynamics", "gradient-flow", "--t1", "1", "--bound", "pr-averaged"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn trivial_check_reports_json() {
    let o = flowcert(&["trivial-check", "--family", "gradient-flow", "--t-points", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["trivial"], false);
    assert_eq!(v["config"]["command"], "trivial-check");
}

#[test]
fn lyapunov_columns() {
    let o = flowcert(&["lyapunov", "--mu-lo", "0.1", "--mu-points", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(headers(&text), ["condition", "p11", "p12", "p22", "p11_reference", "p12_reference"]);
    let r = &data_rows(&text)[0];
    let ratio = r[1].parse::<f64>().unwrap() / r[4].parse::<f64>().unwrap();
    assert!((ratio - 1.0).abs() < 0.05);
}
