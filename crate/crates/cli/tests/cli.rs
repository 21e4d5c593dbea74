use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{"grid": {"cells": [16]}, "t_final": 0.1, "dt": 0.02}"#;

fn fhn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fhn")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn zero_final_time_writes_initial_state_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"grid": {"cells": [16]}, "t_final": 0}"#);
    let out = dir.path().join("out");
    let o = fhn(&["run", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let header: Vec<&str> = lines[0].split(',').collect();
    let col = header.iter().position(|h| *h == "rel_entropy").unwrap();
    assert_eq!(lines[1].split(',').nth(col).unwrap().parse::<f64>().unwrap(), 0.0);
}

#[test]
fn negative_b_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"params": {"b": -1}}"#);
    let out = dir.path().join("out");
    let o = fhn(&["run", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("params.b"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unknown_key_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{\n  \"grid\": {\"cells\": [16]},\n  \"tfinal\": 1\n}");
    let o = fhn(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("tfinal"), "{err}");
}

#[test]
fn unnormalised_density_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"rho0": {"kind": "gaussian", "mass": 2}}"#);
    let o = fhn(&["run", "--config", &cfg, "--out-dir", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("rho0"), "{}", stderr(&o));
}

#[test]
fn defaults_are_echoed_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = fhn(&["run", "--config", &cfg, "--out-dir", out.to_str().unwrap(), "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["params"]["tau"], 0.2);
    assert_eq!(m["config"]["seed"], 7);
    assert_eq!(m["summary"]["passed"], true);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut dirs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = fhn(&["run", "--config", &cfg, "--out-dir", out.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success(), "{}", stderr(&o));
        dirs.push(out);
    }
    for f in ["diagnostics.csv", "macro.csv", "cells.csv", "f_particles.csv"] {
        assert_eq!(fs::read(dirs[0].join(f)).unwrap(), fs::read(dirs[1].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn eps_sweep_writes_one_row_per_eps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"grid": {"cells": [16]}, "t_final": 0.2, "dt": 0.02, "eps_list": [0.1, 0.05, 0.025]}"#);
    let out = dir.path().join("out");
    let o = fhn(&["sweep-eps", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "param_value,sup_rel_entropy,int_var_weighted,int_var_unweighted,weak_gap,slope_partial");
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[2].split(',').next().unwrap().parse::<f64>().unwrap(), 0.05);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(m["summary"]["rel_entropy_fit"]["slope"].is_number());
}

#[test]
fn single_network_size_is_not_fitted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"grid": {"cells": [16]}, "dt": 0.05, "sweep_n": {"n_list": [1], "seeds": 2, "t_final": 0.1}}"#,
    );
    let out = dir.path().join("out");
    let o = fhn(&["sweep-n", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("not fitted"));
    assert_eq!(fs::read_to_string(out.join("sweep_n.csv")).unwrap().lines().count(), 2);
}

#[test]
fn validate_reports_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = fhn(&["validate", "--config", &cfg, "--out-dir", dir.path().join("v").to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    for name in ["mass_conservation", "dissipation_sign", "moment_inequality_p2", "nonlocal_dissipation"] {
        assert!(stdout.contains(&format!("PASS {name}")), "{stdout}");
    }
}

#[test]
fn shipped_config_spells_out_the_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    let mut cfg = fhn_kinetic::harness::parse_config(&path).unwrap();
    cfg.output_dir = fhn_kinetic::harness::ScenarioConfig::default().output_dir;
    assert_eq!(cfg, fhn_kinetic::harness::ScenarioConfig::default());
}
