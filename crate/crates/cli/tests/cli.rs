//! End-to-end runs of the `projlm` binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_projlm");

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}\n{}", self.stdout, self.stderr))
    }
}

fn run_env(args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("PROJLM_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    Run {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn run(args: &[&str]) -> Run {
    run_env(args, &[])
}

fn shipped(name: &str) -> String {
    format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn family_i(kernel: Value, alpha: Value, beta: Value, mu: f64) -> Value {
    json!({"family": "family_i", "mu": mu, "kernel": kernel, "alpha": alpha, "beta": beta})
}

fn identity() -> Value {
    json!({"shape": {"type": "linear", "slope": 1.0}})
}

fn read_x(path: &Path) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap()[2].parse().unwrap()).collect()
}

// ---------------------------------------------------------------------------
// check

#[test]
fn check_exit_codes_follow_the_verdict() {
    let r = run(&["check", "--config", &shipped("relu_arfima.json")]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = r.json();
    assert_eq!(v["exists"], "yes");
    assert!(v["kq"].as_f64().unwrap() > 0.0);
    assert!((v["b2"].as_f64().unwrap() - 0.9).abs() < 1e-9);

    let r = run(&["check", "--config", &shipped("relu_arfima_divergent.json")]);
    assert_eq!(r.code, 2);
    assert_eq!(r.json()["exists"], "no");
}

#[test]
fn check_empty_alpha_is_trivial() {
    let dir = tempfile::tempdir().unwrap();
    let spec = family_i(
        identity(),
        json!({"type": "zero"}),
        json!({"type": "constant_one"}),
        0.0,
    );
    let cfg = write_config(dir.path(), "c.json", &json!({"spec": spec}));
    let r = run(&["check", "--config", &cfg, "--out", s(dir.path())]);
    assert_eq!(r.code, 0);
    assert_eq!(r.json()["kq"], 0.0);
    assert!(dir.path().join("check.json").exists());
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let spec = family_i(identity(), json!({"type": "zero"}), json!({"type": "zero"}), 0.0);
    let cfg = write_config(dir.path(), "c.json", &json!({"spec": spec, "replicatez": 3}));
    let r = run(&["check", "--config", &cfg]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("unknown field `replicatez`"), "{}", r.stderr);
    assert!(r.stderr.contains("line"), "{}", r.stderr);

    let r = run(&["check", "--config", s(&dir.path().join("missing.json"))]);
    assert_eq!(r.code, 1);
    assert_eq!(run(&["check"]).code, 1);
    assert_eq!(run(&["frobnicate"]).code, 1);
}

// ---------------------------------------------------------------------------
// simulate

#[test]
fn simulate_is_byte_identical_across_reruns_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = shipped("relu_arfima.json");
    let ra = run_env(
        &["simulate", "--config", &cfg, "--out", s(&a)],
        &[("PROJLM_THREADS", "1")],
    );
    assert_eq!(ra.code, 0, "{}", ra.stderr);
    let rb = run_env(
        &["simulate", "--config", &cfg, "--out", s(&b)],
        &[("PROJLM_THREADS", "3")],
    );
    assert_eq!(rb.code, 0);
    for f in ["path_0000.csv", "manifest.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let x = read_x(&a.join("path_0000.csv"));
    assert_eq!(x.len(), 3000);
    assert!(x.iter().all(|v| v.is_finite()));
    let m = ra.json();
    assert_eq!(m["config"]["n"], 3000);
    assert_eq!(m["existence"], "yes");
    assert_eq!(m["files"].as_array().unwrap().len(), 1);
}

#[test]
fn constant_spec_gives_all_mu() {
    let dir = tempfile::tempdir().unwrap();
    let spec = family_i(identity(), json!({"type": "zero"}), json!({"type": "zero"}), 2.5);
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"spec": spec, "n": 50, "m": 10, "replicates": 2}),
    );
    let out = dir.path().join("out");
    assert_eq!(run(&["simulate", "--config", &cfg, "--out", s(&out)]).code, 0);
    for f in ["path_0000.csv", "path_0001.csv"] {
        let x = read_x(&out.join(f));
        assert_eq!(x.len(), 50);
        assert!(x.iter().all(|&v| v == 2.5));
    }
}

#[test]
fn seed_and_replicates_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let spec = family_i(
        identity(),
        json!({"type": "finite", "values": [1.0, 0.5]}),
        json!({"type": "zero"}),
        0.0,
    );
    let cfg = write_config(dir.path(), "c.json", &json!({"spec": spec, "n": 20, "m": 4, "seed": 5}));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = run(&["simulate", "--config", &cfg, "--out", s(&a)]);
    let rb = run(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        s(&b),
        "--seed",
        "6",
        "--replicates",
        "3",
    ]);
    assert_eq!((ra.code, rb.code), (0, 0));
    assert_eq!(rb.json()["config"]["seed"], 6);
    assert_eq!(rb.json()["files"].as_array().unwrap().len(), 3);
    assert_ne!(ra.json()["digest"], rb.json()["digest"]);
    assert_ne!(read_x(&a.join("path_0000.csv")), read_x(&b.join("path_0000.csv")));
}

#[test]
fn simulate_refuses_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: Value =
        serde_json::from_str(&std::fs::read_to_string(shipped("relu_arfima_divergent.json")).unwrap()).unwrap();
    cfg["n"] = json!(20);
    cfg["m"] = json!(20);
    let cfg = write_config(dir.path(), "c.json", &cfg);
    let out = dir.path().join("out");
    let r = run(&["simulate", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("refused"));
    assert!(!out.join("manifest.json").exists());
    let r = run(&["simulate", "--config", &cfg, "--out", s(&out), "--force"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json()["existence"], "no");
}

// ---------------------------------------------------------------------------
// diagnose

fn iid_config(dir: &Path, format: &str) -> String {
    let spec = family_i(
        identity(),
        json!({"type": "finite", "values": [1.0]}),
        json!({"type": "zero"}),
        0.0,
    );
    write_config(
        dir,
        "iid.json",
        &json!({"spec": spec, "n": 20000, "m": 1, "seed": 9, "replicates": 8, "format": format,
                "diagnostics": {"centering": {"known": 0.0}}}),
    )
}

#[test]
fn diagnose_iid_hurst_is_one_half() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = iid_config(dir.path(), "csv");
    let out = dir.path().join("out");
    assert_eq!(run(&["simulate", "--config", &cfg, "--out", s(&out)]).code, 0);
    let r = run(&["diagnose", "--manifest", s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = r.json();
    let h = v["h_hat"].as_f64().unwrap();
    assert!((0.45..=0.55).contains(&h), "H = {h}");
    assert!((v["variance"].as_f64().unwrap() - 1.0).abs() < 0.05);
    for f in ["diagnostics.json", "acf.csv", "histogram.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let acf = std::fs::read_to_string(out.join("acf.csv")).unwrap();
    assert!(acf.starts_with("lag,gamma,std_err,rho\n0,"));
}

#[test]
fn diagnose_reads_binary_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = iid_config(dir.path(), "binary");
    let out = dir.path().join("out");
    let sim = run(&["simulate", "--config", &cfg, "--out", s(&out), "--replicates", "2"]);
    assert_eq!(sim.code, 0);
    assert_eq!(sim.json()["files"][0]["name"], "paths.bin");
    let r = run(&["diagnose", "--manifest", s(&out.join("manifest.json"))]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json()["replicates"], 2);
    assert_eq!(r.json()["n"], 20000);
}

#[test]
fn diagnose_linear_arfima_recovers_d() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let sim = run(&["simulate", "--config", &shipped("linear_arfima.json"), "--out", s(&out)]);
    assert_eq!(sim.code, 0, "{}", sim.stderr);
    let r = run(&["diagnose", "--manifest", s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let d = r.json()["d_hat"].as_f64().unwrap();
    assert!((0.35..=0.45).contains(&d), "d_hat = {d}");
}

#[test]
fn diagnose_rejects_stale_or_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = family_i(
        identity(),
        json!({"type": "finite", "values": [1.0, 0.5]}),
        json!({"type": "zero"}),
        0.0,
    );
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"spec": spec, "n": 200, "m": 4, "replicates": 2}),
    );
    let out = dir.path().join("out");
    assert_eq!(run(&["simulate", "--config", &cfg, "--out", s(&out)]).code, 0);
    assert_eq!(run(&["diagnose", "--manifest", s(&out)]).code, 0);

    // flip one digit in one path file
    let p: PathBuf = out.join("path_0001.csv");
    let text = std::fs::read_to_string(&p).unwrap();
    let i = text.rfind(|c: char| c.is_ascii_digit() && c != '9').unwrap();
    let mut bytes = text.into_bytes();
    bytes[i] += 1;
    std::fs::write(&p, &bytes).unwrap();
    let r = run(&["diagnose", "--manifest", s(&out)]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("digest mismatch"), "{}", r.stderr);

    std::fs::remove_file(&p).unwrap();
    assert_eq!(run(&["diagnose", "--manifest", s(&out)]).code, 1);
    assert_eq!(run(&["diagnose", "--manifest", s(&dir.path().join("nowhere"))]).code, 1);
}

// ---------------------------------------------------------------------------
// oracle-compare

#[test]
fn oracle_compare_random_specs_agree() {
    let r = run(&[
        "oracle-compare",
        "--config",
        &shipped("relu_arfima.json"),
        "--random",
        "--trials",
        "50",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = r.json();
    assert!(v["max_rel_dev"].as_f64().unwrap() < 1e-10);
    assert_eq!(v["per_trial"].as_array().unwrap().len(), 50);
}

#[test]
fn oracle_compare_refusals_and_errors() {
    let cfg = shipped("relu_arfima.json");
    let r = run(&["oracle-compare", "--config", &cfg, "--window", "30"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("cap"));
    assert_eq!(run(&["oracle-compare", "--config", &shipped("larch.json")]).code, 1);
}

#[test]
fn oracle_compare_linear_zero_beta_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = family_i(
        json!({"shape": {"type": "linear", "slope": 0.7}}),
        json!({"type": "geometric", "ratio": 0.6, "scale": 1.3}),
        json!({"type": "zero"}),
        0.0,
    );
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"spec": spec, "oracle": {"window": 8, "trials": 10}}),
    );
    let r = run(&["oracle-compare", "--config", &cfg]);
    assert_eq!(r.code, 0);
    assert_eq!(r.json()["max_abs_dev"], 0.0);
}

// ---------------------------------------------------------------------------
// larch

#[test]
fn larch_variance_matches_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(&[
        "larch",
        "--config",
        &shipped("larch.json"),
        "--simulate",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = r.json();
    assert!((v["variance"].as_f64().unwrap() - 0.5625).abs() < 1e-12);
    let mc = &v["simulation"]["sample_variance"];
    let (mean, se) = (mc["mean"].as_f64().unwrap(), mc["std_err"].as_f64().unwrap());
    assert!((mean - 0.5625).abs() <= 3.0 * se, "{mean} +- {se}");
    assert!(dir.path().join("larch.csv").exists());
}

#[test]
fn larch_reports_both_moment_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let spec = json!({"family": "larch", "alpha": 1.0, "beta": {"type": "finite", "values": [0.0, 0.99]}});
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"spec": spec, "moments": {"p": 4.0, "mu_p": 3.0, "c_p": 2.0}}),
    );
    let r = run(&["larch", "--config", &cfg]);
    assert_eq!(r.code, 0);
    let v = r.json();
    assert!(v["moment_condition_holds"].is_boolean());
    assert!(v["old_condition_holds"].is_boolean());
    assert!(v["simulation"].is_null());
}

#[test]
fn larch_zero_beta_gives_constant_volatility() {
    let dir = tempfile::tempdir().unwrap();
    let spec = json!({"family": "larch", "alpha": 0.7, "beta": {"type": "zero"}});
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"spec": spec, "n": 100, "m": 5, "seed": 3}),
    );
    assert_eq!(
        run(&["larch", "--config", &cfg, "--simulate", "--out", s(dir.path())]).code,
        0
    );
    let mut rd = csv::Reader::from_path(dir.path().join("larch.csv")).unwrap();
    let rows: Vec<(f64, f64)> = rd
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[2].parse().unwrap(), r[3].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().all(|&(sigma, _)| sigma == 0.7));
    // r_t / alpha is a standard normal draw
    let z: Vec<f64> = rows.iter().map(|&(_, r)| r / 0.7).collect();
    let var = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
    assert!(z.iter().any(|&v| v != 0.0) && (0.5..2.0).contains(&var));
}

#[test]
fn larch_refuses_explosive_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let spec = json!({"family": "larch", "alpha": 1.0, "beta": {"type": "finite", "values": [0.0, 1.1]}});
    let cfg = write_config(dir.path(), "c.json", &json!({"spec": spec, "n": 30, "m": 5}));
    let r = run(&["larch", "--config", &cfg, "--simulate", "--out", s(dir.path())]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("refused"));
    let r = run(&[
        "larch",
        "--config",
        &cfg,
        "--simulate",
        "--force",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(r.code, 2, "exists is still no");
    assert!(dir.path().join("larch.csv").exists());
}
