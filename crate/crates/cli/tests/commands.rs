//! End-to-end runs of the `rto` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rto(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rto")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = rto(args);
    assert!(
        out.status.success(),
        "rto {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(String::from).collect()
}

fn rows(path: &Path) -> usize {
    csv::Reader::from_path(path).unwrap().records().count()
}

#[test]
fn sample_writes_outputs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let base = ["--model", "elliptic", "--n", "41", "--sigma", "1e-3", "--chain-length", "200", "--seed", "7"];
    ok(&[&["sample", "--workers", "1", "--out", a.to_str().unwrap()], &base[..]].concat());
    ok(&[&["sample", "--workers", "3", "--out", b.to_str().unwrap()], &base[..]].concat());
    for f in ["chain.csv", "stats.json", "config-echo.json"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    assert_eq!(fs::read(a.join("chain.csv")).unwrap(), fs::read(b.join("chain.csv")).unwrap());
    let h = header(&a.join("chain.csv"));
    assert_eq!(&h[..3], ["step", "accepted", "log_weight"]);
    assert_eq!(h.len(), 3 + 41);
    assert_eq!(rows(&a.join("chain.csv")), 200);

    let stats: serde_json::Value = serde_json::from_slice(&fs::read(a.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["sampler"], "rto-scalable");
    assert_eq!(stats["dim"], 41);
    let echo: serde_json::Value = serde_json::from_slice(&fs::read(a.join("config-echo.json")).unwrap()).unwrap();
    assert_eq!(echo["command"], "sample");
    assert_eq!(echo["config"]["seed"], 7);
    assert_eq!(echo["problems"]["sample"]["kind"], "elliptic");
}

#[test]
fn config_echo_reruns_to_the_same_chain() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    ok(&["sample", "--model", "toy2d", "--sigma", "0.3", "--sampler", "rto-standard", "--chain-length", "100",
         "--seed", "3", "--out", first.to_str().unwrap()]);
    let echo: serde_json::Value = serde_json::from_slice(&fs::read(first.join("config-echo.json")).unwrap()).unwrap();
    let cfg = dir.path().join("config.json");
    fs::write(&cfg, serde_json::to_vec(&echo["config"]).unwrap()).unwrap();
    let second = dir.path().join("second");
    ok(&["sample", "--config", cfg.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_eq!(fs::read(first.join("chain.csv")).unwrap(), fs::read(second.join("chain.csv")).unwrap());
}

#[test]
fn every_sampler_runs_on_the_toy() {
    let dir = tempfile::tempdir().unwrap();
    for s in ["rto-standard", "rto-scalable", "pcn", "implicit", "rml", "importance"] {
        let out = dir.path().join(s);
        ok(&["sample", "--model", "toy2d", "--sigma", "0.5", "--sampler", s, "--chain-length", "300",
             "--out", out.to_str().unwrap()]);
        // pCN keeps the second half of its chain
        let expect = if s == "pcn" { 150 } else { 300 };
        assert_eq!(rows(&out.join("chain.csv")), expect, "{s}");
        assert_eq!(header(&out.join("chain.csv")).len(), 5, "{s}");
    }
}

#[test]
fn study_commands_write_stable_columns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = |name: &str| d.join(name).to_str().unwrap().to_string();
    let common = ["--model", "elliptic", "--chain-length", "100", "--sigma", "1e-2"];

    ok(&[&["dim-study", "--dims", "41,81", "--out", &out("dim")], &common[..]].concat());
    let study_cols = [
        "sampler", "n", "sigma", "rank", "acceptance", "median_ess", "ess_fraction", "mean_iterations",
        "forward_evals_per_proposal", "jvp_evals_per_proposal", "vjp_evals_per_proposal", "cpu_per_proposal",
        "cpu_per_ess", "total_seconds",
    ];
    assert_eq!(header(&d.join("dim/cpu_vs_dim.csv")), study_cols);
    assert_eq!(rows(&d.join("dim/cpu_vs_dim.csv")), 2);

    ok(&[&["noise-study", "--n", "41", "--sigmas", "1e-1,1e-2", "--out", &out("noise")], &common[..]].concat());
    assert_eq!(header(&d.join("noise/cpu_vs_obs.csv")), study_cols);
    assert_eq!(rows(&d.join("noise/cpu_vs_obs.csv")), 2);

    ok(&[&["compare-pcn", "--n", "41", "--sigmas", "1e-1", "--betas", "0.1,0.3", "--pcn-steps", "400",
           "--out", &out("pcn")], &common[..]].concat());
    assert_eq!(
        header(&d.join("pcn/pcn_comparison.csv")),
        ["sigma", "sampler", "beta", "steps", "acceptance", "median_ess", "total_seconds", "cpu_per_ess", "converged"]
    );
    assert_eq!(rows(&d.join("pcn/pcn_comparison.csv")), 2);

    ok(&["truncation-study", "--model", "toy2d", "--sigma", "0.3", "--chain-length", "100", "--thresholds", "10,1,0",
         "--out", &out("trunc")]);
    assert_eq!(
        header(&d.join("trunc/truncation.csv")),
        ["sampler", "tau", "rank", "acceptance", "median_ess", "ess_fraction"]
    );
    assert_eq!(rows(&d.join("trunc/truncation.csv")), 4);
    assert_eq!(header(&d.join("trunc/density_grid.csv")), ["tau", "rank", "x1", "x2", "prior", "target", "proposal"]);
    for f in ["dim", "noise", "pcn", "trunc"] {
        assert!(d.join(f).join("config-echo.json").is_file());
    }
}

#[test]
fn bad_input_exits_with_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    for args in [
        vec!["sample", "--sampler", "gibbs", "--out", o],
        vec!["sample", "--sigma", "-1", "--out", o],
        vec!["dim-study", "--dims", "81,41", "--out", o],
        vec!["truncation-study", "--thresholds", "0,1", "--out", o],
        vec!["frobnicate"],
    ] {
        assert_eq!(rto(&args).status.code(), Some(1), "{args:?}");
    }
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"model": {"colour": 3}}"#).unwrap();
    assert_eq!(rto(&["sample", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(rto(&["--help"]).status.code(), Some(0));
}
