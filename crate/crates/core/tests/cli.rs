use std::process::{Command, Output};

use serde_json::Value;

fn tricomi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tricomi"))
        .args(args)
        .env_remove("TRICOMI_SEED")
        .output()
        .expect("binary runs")
}

fn json(args: &[&str]) -> Value {
    let out = tricomi(args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn header(args: &[&str]) -> String {
    let mut a = args.to_vec();
    a.extend(["--format", "csv"]);
    let out = tricomi(&a);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn golden_csv_headers() {
    assert_eq!(header(&["solve", "--alpha", "1"]), "t,x,u");
    assert_eq!(header(&["mc-solve", "--alpha", "1", "--samples", "100"]), "t,x,estimate,std_error,pairs,quadrature");
    assert_eq!(header(&["xi-verify", "--alpha", "1", "--grid", "65"]), "t,xi,xi_prime,g,g_prime");
    assert_eq!(header(&["field-sample", "--alpha", "1"]), "t,x,value");
    assert_eq!(header(&["study", "--variant", "wave", "--max-k", "2", "--empirical", "false"]), "n,r_n,variance,gap");
    assert_eq!(header(&["variance", "--alpha", "1"]), "quantity,value");
}

#[test]
fn solve_examples() {
    let v = json(&["solve", "--alpha", "0", "--phi", "cos", "--t", "1", "--x", "0"]);
    assert!((v["payload"]["u"].as_f64().unwrap() - 1f64.sin()).abs() < 1e-12);
    let v = json(&["solve", "--alpha", "2", "--phi", "one", "--t", "2", "--x", "5"]);
    assert!((v["payload"]["u"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(v["command"], "solve");
    assert!(v.get("timings").is_none());
    let v = json(&["solve", "--alpha", "1", "--timings"]);
    assert!(v["timings"]["total_seconds"].as_f64().is_some());
}

#[test]
fn missing_alpha_prints_usage() {
    let out = tricomi(&["solve", "--phi", "one"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--alpha") && err.contains("Usage: tricomi solve"), "{err}");
}

#[test]
fn exit_codes() {
    let code = |a: &[&str]| tricomi(a).status.code();
    assert_eq!(code(&["xi-verify", "--alpha", "2", "--T", "-1"]), Some(2));
    assert_eq!(code(&["study", "--variant", "tricomi-lower", "--noise", "fractional", "--hurst", "0.4"]), Some(2));
    assert_eq!(code(&["solve", "--alpha", "-1"]), Some(2));
    assert_eq!(code(&["solve", "--alpha", "x"]), Some(2));
    assert_eq!(code(&["solve", "--alpha", "1", "--t", "1:0:3"]), Some(2));
    assert_eq!(code(&["solve", "--alpha", "1", "--format", "both"]), Some(2));
    assert_eq!(code(&["solve", "--alpha", "1", "--bogus"]), Some(2));
    assert_eq!(code(&["nope"]), Some(2));
    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["solve", "--alpha", "1", "--output-dir", "/proc/forbidden/x"]), Some(4));
    // perturbed seed: the iteration stops contracting
    assert_eq!(code(&["xi-verify", "--alpha", "2", "--T", "0.5", "--perturbation", "0.1"]), Some(3));
}

#[test]
fn xi_verify_examples() {
    let v = json(&["xi-verify", "--alpha", "2", "--T", "0.5"]);
    assert_eq!(v["payload"]["converged"], true);
    assert!(v["payload"]["gap"].as_f64().unwrap() < 1e-6);
    let v = json(&["xi-verify", "--alpha", "0", "--T", "1", "--grid", "257"]);
    assert_eq!(v["payload"]["converged"], true);
    assert!(v["payload"]["distance_to_xi"].as_f64().unwrap() < 1e-8);
}

#[test]
fn config_file_precedence_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# test\nalpha = 0\nphi = cos\nt = 1\n").unwrap();
    let p = cfg.to_str().unwrap();
    let v = json(&["solve", "--config", p]);
    assert!((v["payload"]["u"].as_f64().unwrap() - 1f64.sin()).abs() < 1e-12);
    // the flag wins
    let v = json(&["solve", "--config", p, "--phi", "one"]);
    assert!((v["payload"]["u"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    std::fs::write(&cfg, "alpha = 0\nalhpa = 1\n").unwrap();
    let out = tricomi(&["solve", "--config", p]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alhpa"));
}

#[test]
fn seed_environment_applies_only_without_flag() {
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_tricomi"));
        c.args(["mc-solve", "--alpha", "1", "--samples", "1000"]);
        match env {
            Some(e) => c.env("TRICOMI_SEED", e),
            None => c.env_remove("TRICOMI_SEED"),
        };
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        let v: Value = serde_json::from_slice(&c.output().unwrap().stdout).unwrap();
        v["config"]["seed"].as_u64().unwrap()
    };
    assert_eq!(run(None, None), 42);
    assert_eq!(run(Some("7"), None), 7);
    assert_eq!(run(Some("7"), Some("9")), 9);
}

/// Feeding the config echo back as a config file reproduces the payload.
#[test]
fn config_echo_reproduces_payload() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["solve", "--alpha", "2.5", "--phi", "gaussian-bump", "--width", "0.3", "--t", "0:1:3", "--x", "-1:1:3"][..],
        &["mc-solve", "--alpha", "0.7", "--phi", "square", "--samples", "4000", "--seed", "5"][..],
        &["field-sample", "--alpha", "1", "--x", "-0.5:0.5:3", "--dx", "0.01", "--paths", "20"][..],
        &["variance", "--variant", "tricomi-lower", "--hurst", "0.6", "--n", "4"][..],
    ] {
        let first = json(args);
        let cfg = dir.path().join(format!("{}.cfg", args[0]));
        let text: String = first["config"]
            .as_object()
            .unwrap()
            .iter()
            .map(|(k, v)| match v {
                Value::String(s) => format!("{k} = {s}\n"),
                other => format!("{k} = {other}\n"),
            })
            .collect();
        std::fs::write(&cfg, text).unwrap();
        let again = json(&[args[0], "--config", cfg.to_str().unwrap()]);
        assert_eq!(first["payload"], again["payload"], "{}", args[0]);
        assert_eq!(first["config"], again["config"], "{}", args[0]);
    }
}

#[test]
fn output_dir_writes_both_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("out");
    let out = tricomi(&["variance", "--alpha", "2", "--format", "both", "--output-dir", d.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let csv = std::fs::read_to_string(d.join("variance.csv")).unwrap();
    assert!(csv.starts_with("quantity,value\r\nl2,1.0942198"));
    let v: Value = serde_json::from_slice(&std::fs::read(d.join("variance.json")).unwrap()).unwrap();
    assert_eq!(v["command"], "variance");
    assert!(v["config"].get("output-dir").is_none());
}

#[test]
fn threads_do_not_change_results() {
    let a = tricomi(&["field-sample", "--alpha", "2", "--x", "-1:1:5", "--dx", "0.01", "--paths", "64", "--threads", "1"]);
    let b = tricomi(&["field-sample", "--alpha", "2", "--x", "-1:1:5", "--dx", "0.01", "--paths", "64", "--threads", "3"]);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(tricomi(&["solve", "--alpha", "1", "--threads", "0"]).status.code(), Some(2));
}

fn empirical_variance(alpha: &str) -> (f64, f64, f64) {
    let v = json(&["field-sample", "--alpha", alpha, "--t", "1", "--x", "0", "--paths", "10000", "--seed", "11"]);
    let p = &v["payload"]["statistics"]["points"][0];
    (
        p["empirical_variance"].as_f64().unwrap(),
        p["std_error"].as_f64().unwrap(),
        p["analytic_variance"]["value"].as_f64().unwrap(),
    )
}

#[test]
fn field_sample_variance_matches_isometry() {
    for (alpha, target) in [("0", 0.5), ("2", 1.0942198)] {
        let (emp, se, analytic) = empirical_variance(alpha);
        assert!((analytic - target).abs() < 1e-6);
        assert!((emp - target).abs() <= 4.0 * se, "alpha={alpha}: {emp} ± {se}");
    }
}

#[test]
fn study_examples() {
    let v = json(&["study", "--variant", "tricomi-lower", "--noise", "fractional", "--hurst", "0.75", "--max-k", "10", "--paths", "500"]);
    assert_eq!(v["payload"]["verdict"], "CONVERGES");
    let lim = v["payload"]["curve"]["closed_form_limit"]["value"].as_f64().unwrap();
    assert!((lim - 1.178097).abs() < 1e-6);
}
