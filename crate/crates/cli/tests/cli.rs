use std::path::Path;
use std::process::{Command, Output};

fn bellforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bellforge"))
        .args(args)
        .env("BELLFORGE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_bell_pair_certifies_chsh() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = bellforge(&["solve", "--engine", "exact", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(10), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&o);
    assert_eq!(report["verdict"], "nonlocal_certified");
    assert_eq!(report["classical_bound"]["b_c"]["value"].as_f64(), Some(2.0));
    let q = report["quantum_value"]["value"]["value"].as_f64().unwrap();
    assert!((q + 8f64.sqrt()).abs() < 1e-9);
    for f in ["dataset.json", "trace.tsv", "model.json", "inequality.txt", "inequality.json", "report.json", "metadata.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert_eq!(read_json(&out.join("report.json")), report);
}

#[test]
fn reports_are_deterministic_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = bellforge(&["solve", "--seed", "7", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(10));
        ["report.json", "inequality.json", "trace.tsv", "dataset.json"].map(|f| std::fs::read(out.join(f)).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn planted_config_converges_locally_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"source": {"type": "planted", "n_sites": 2, "n_settings": 2, "seed": 3, "scale": 0.5}, "seed": 1}"#,
    )
    .unwrap();
    let o = bellforge(&["solve", "--config", cfg.to_str().unwrap(), "--seed", "99"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&o);
    assert_eq!(report["outcome"], "converged_local");
    assert_eq!(report["environment"]["seed"], 99);
    assert!(report["verdict"].is_null() && report["inequality"].is_null());
}

#[test]
fn max_iters_flag_makes_run_inconclusive() {
    let o = bellforge(&["solve", "--max-iters", "3"]);
    assert_eq!(o.status.code(), Some(20));
    assert_eq!(json(&o)["outcome"], "inconclusive");
}

#[test]
fn usage_and_io_errors_exit_nonzero_with_message() {
    let o = bellforge(&["solve", "--config", "/definitely/not/here.json"]);
    assert!(o.status.code().unwrap() >= 64);
    assert!(String::from_utf8_lossy(&o.stderr).contains("not/here.json"));

    let o = bellforge(&["solve", "--engine", "quantum"]);
    assert_eq!(o.status.code(), Some(64));

    let o = bellforge(&["--help"]);
    assert_eq!(o.status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let o = bellforge(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(64));

    let o = Command::new(env!("CARGO_BIN_EXE_bellforge"))
        .args(["pbc"])
        .env("BELLFORGE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(64));
}

#[test]
fn oracle_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let o = bellforge(&["oracle", "--theta", "0.3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let d = read_json(&dir.path().join("dataset.json"));
    assert_eq!(d["entries"].as_array().unwrap().len(), 4);
    assert_eq!(d["scenario"]["n_sites"], 2);
}

#[test]
fn pbc_tables_agree_across_methods() {
    let dir = tempfile::tempdir().unwrap();
    let o = bellforge(&["pbc", "--k", "3", "--n-sites", "4", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let r = json(&o);
    let bc = r["classical_bound"].as_f64().unwrap();
    assert_eq!(bc, 16.0);
    assert_eq!(r["symmetric_bound"].as_f64(), Some(bc));
    assert_eq!(r["bruteforce_bound"].as_f64(), Some(bc));
    assert!(r["max_quantum_violation"].as_f64().unwrap() < -bc);
    for f in ["pbc.json", "beta.tsv", "angles.tsv", "verdicts.tsv"] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.lines().count() > 1, "{f} empty");
    }
}

#[test]
fn pbc_at_singular_angle_reports_the_limit() {
    let o = bellforge(&["pbc", "--k", "3", "--theta", "0"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&o)["angle_functions"]["singular"], true);
}

#[test]
fn witness_writes_tab_delimited_curve() {
    let dir = tempfile::tempdir().unwrap();
    let o = bellforge(&["witness", "--n-sites", "8", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("witness.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 40);
    assert_eq!(rows[0][4], "bell_nonlocal");
    let v: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(v.windows(2).all(|w| w[1] >= w[0]));
    assert!(json(&o)["nonlocal_below_t"].as_f64().is_some());
}

#[test]
fn bound_from_file_and_builtin_families() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(bellforge(&["solve", "--out", out.to_str().unwrap()]).status.code(), Some(10));
    let ineq = out.join("inequality.json");
    let o = bellforge(&["bound", "--config", ineq.to_str().unwrap(), "--bound-method", "anneal"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&o)["b_c"].as_f64(), Some(2.0));
    assert_eq!(json(&o)["certified"], false);

    let o = bellforge(&["bound", "--k", "2", "--n-sites", "6", "--bound-method", "symmetric"]);
    assert_eq!(json(&o)["b_c"].as_f64(), Some(12.0));

    let o = bellforge(&["bound", "--k", "3", "--n-sites", "3"]);
    assert_eq!(json(&o)["b_c"].as_f64(), Some(12.0));
}
