//! End-to-end runs of the command-line interface.

use std::path::Path;
use std::process::Command;

fn netfn_bin() -> &'static str {
    env!("CARGO_BIN_EXE_netfn")
}

fn write_config(dir: &Path, design: serde_json::Value) -> std::path::PathBuf {
    let config = serde_json::json!({
        "graph": {"er": {"n": 15, "edge_prob": 0.2, "feature_dim": 1}},
        "model": {"cnf": {"beta": [1.0], "gamma": [0.5], "noise_sd": 0.5}},
        "design": design,
        "replications": 25,
        "seed": 7
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn generate_sample_estimate_flow() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        serde_json::json!({"sbs": {"kind": {"srswor": {"m": 4}}, "t_waves": 2}}),
    );
    let out = dir.path().join("out");

    let status = Command::new(netfn_bin())
        .args(["generate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{status:?}");
    assert!(out.join("nodes.csv").exists());
    assert!(out.join("edges.csv").exists());
    assert!(out.join("graph.json").exists());
    let echo: serde_json::Value = serde_json::from_slice(&status.stdout).unwrap();
    assert_eq!(echo["nodes"], 15);
    assert!(echo["checksums"].as_object().unwrap().len() == 2);

    let status = Command::new(netfn_bin())
        .args(["sample", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{status:?}");
    let sample_path = out.join("sample.json");
    assert!(sample_path.exists());

    let status = Command::new(netfn_bin())
        .args(["estimate", "--config"])
        .arg(&config)
        .arg("--sample")
        .arg(&sample_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{status:?}");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("estimate.json")).unwrap()).unwrap();
    assert!(report["theta"]["cnf"]["beta"][0].is_number());
}

#[test]
fn mc_writes_summary_and_replicates() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        serde_json::json!({"trw": {"r": 1.0, "burn_in": 200, "n_extract": 40, "thin": 1, "replicates": 3}}),
    );
    let out = dir.path().join("out");
    let status = Command::new(netfn_bin())
        .args(["mc", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{status:?}");
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["replicates_requested"], 25);
    assert_eq!(summary["replicates_failed"], 0);
    let replicates = std::fs::read_to_string(out.join("replicates.csv")).unwrap();
    assert_eq!(replicates.lines().count(), 26); // header + 25 rows
    assert!(replicates.starts_with("rep,ok,eligible,theta0,theta1,score0_0,score0_1"));
}

#[test]
fn mc_byte_identical_given_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        serde_json::json!({"sbs": {"kind": {"bernoulli": {"p": 0.3}}, "t_waves": 2}}),
    );
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let status = Command::new(netfn_bin())
            .args(["mc", "--config"])
            .arg(&config)
            .arg("--seed")
            .arg("99")
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{status:?}");
    }
    let a = std::fs::read(out_a.join("replicates.csv")).unwrap();
    let b = std::fs::read(out_b.join("replicates.csv")).unwrap();
    assert_eq!(a, b, "replicate tables must be byte-identical");
    let a = std::fs::read(out_a.join("summary.json")).unwrap();
    let b = std::fs::read(out_b.join("summary.json")).unwrap();
    assert_eq!(a, b, "summaries must be byte-identical");
}

#[test]
fn check_subcommand_passes() {
    let status = Command::new(netfn_bin()).arg("check").output().unwrap();
    assert!(status.status.success(), "{status:?}");
    let stdout = String::from_utf8_lossy(&status.stdout);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
    assert!(stdout.lines().count() >= 7);
}

#[test]
fn bad_config_exits_nonzero_with_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, b"{\"graph\": 42}").unwrap();
    let status = Command::new(netfn_bin())
        .args(["mc", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(!status.status.success());
    let err: serde_json::Value = serde_json::from_slice(&status.stderr).unwrap();
    assert!(err["error"].is_string());
}
