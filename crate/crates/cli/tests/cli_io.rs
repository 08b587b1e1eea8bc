//! File-format and verb behavior of the batch front end.

use std::fs;
use std::path::Path;
use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_manipsim"))
}

fn run_in(dir: &Path, args: &[&str]) -> std::process::Output {
    binary()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

#[test]
fn run_writes_all_outputs_with_documented_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["run", "--out", "o", "--set", "duration=0.5"]);
    assert!(out.status.success(), "{out:?}");

    for name in ["trace.csv", "metrics.json", "fig2.csv", "fig3.csv", "fig4.csv", "fig5.csv", "fig6.csv", "fig7.csv"] {
        assert!(dir.path().join("o").join(name).exists(), "missing {name}");
    }

    let trace = fs::read_to_string(dir.path().join("o/trace.csv")).unwrap();
    let mut lines = trace.lines();
    let header = lines.next().unwrap();
    assert_eq!(
        header,
        "t,q1,q2,dq1,dq2,q1_hat_ekf,q2_hat_ekf,dq1_hat_ekf,dq2_hat_ekf,\
         q1_hat_arekf,q2_hat_arekf,dq1_hat_arekf,dq2_hat_arekf,sigma1,sigma2,u1,u2,d1,d2,V"
            .replace(char::is_whitespace, "")
    );
    let columns = header.split(',').count();
    let mut rows = 0usize;
    for line in lines {
        let values: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(values.len(), columns);
        assert!(values.iter().all(|v| v.is_finite()), "non-finite row: {line}");
        rows += 1;
    }
    // duration / ts + 1 records
    assert_eq!(rows, (0.5f64 / 0.005).floor() as usize + 1);

    let fig2 = fs::read_to_string(dir.path().join("o/fig2.csv")).unwrap();
    assert!(fig2.starts_with("t,q1_true,q1_ekf,q1_arekf\n"));
    assert_eq!(fig2.lines().count(), rows + 1);
    let fig6 = fs::read_to_string(dir.path().join("o/fig6.csv")).unwrap();
    assert!(fig6.starts_with("t,sigma1,sigma2\n"));
    let fig7 = fs::read_to_string(dir.path().join("o/fig7.csv")).unwrap();
    assert!(fig7.starts_with("t,u1,u2\n"));
}

#[test]
fn sweep_metrics_contains_entries_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["sweep", "--out", "s", "--seeds", "5", "--set", "duration=0.2"],
    );
    assert!(out.status.success(), "{out:?}");
    let text = fs::read_to_string(dir.path().join("s/metrics.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["runs"].as_array().unwrap().len(), 5);
    assert_eq!(json["aggregate"]["runs"], 5);
    assert!(json["aggregate"]["ekf_mean_rmse"].is_array());
    assert!(json["aggregate"]["arekf_mean_rmse"].is_array());

    // reruns of the same sweep are byte-identical
    let out2 = run_in(
        dir.path(),
        &["sweep", "--out", "s2", "--seeds", "5", "--set", "duration=0.2"],
    );
    assert!(out2.status.success());
    let text2 = fs::read_to_string(dir.path().join("s2/metrics.json")).unwrap();
    assert_eq!(text, text2);
}

#[test]
fn sweep_seed_list_and_traces_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["sweep", "--out", "s", "--seeds", "3,9", "--traces", "--set", "duration=0.1"],
    );
    assert!(out.status.success(), "{out:?}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("s/metrics.json")).unwrap())
            .unwrap();
    let runs = json["runs"].as_array().unwrap();
    let seeds: Vec<u64> = runs.iter().map(|r| r["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, vec![3, 9]);
    assert!(dir.path().join("s/seed_3/trace.csv").exists());
    assert!(dir.path().join("s/seed_9/trace.csv").exists());
}

#[test]
fn compare_noise_free_filters_agree() {
    // no noise, no perturbation, no disturbance, exact initialization:
    // both filters are exact, so both RMSE columns sit at zero
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "compare",
            "--out",
            "c",
            "--set", "q_true=0.0",
            "--set", "r_true=0.0",
            "--set", "filter_mass_scale=[1.0, 1.0]",
            "--set", "disturbance_kind=zero",
            "--set", "belief_mean=[0.4, -0.3, 0.0, 0.0]",
            "--set", "integrator=euler",
            "--set", "duration=0.5",
        ],
    );
    assert!(out.status.success(), "{out:?}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("c/comparison.json")).unwrap())
            .unwrap();
    for i in 0..4 {
        let ekf = json["ekf_rmse"][i].as_f64().unwrap();
        let arekf = json["arekf_rmse"][i].as_f64().unwrap();
        assert!(ekf.abs() < 1e-9, "ekf rmse {ekf}");
        assert!((ekf - arekf).abs() < 1e-9, "filters differ: {ekf} vs {arekf}");
    }
}

#[test]
fn compare_with_infinite_alpha_makes_filters_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "compare",
            "--out", "c",
            "--seeds", "2",
            "--set", "arekf_alpha=inf",
            "--set", "duration=0.5",
        ],
    );
    assert!(out.status.success(), "{out:?}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("c/comparison.json")).unwrap())
            .unwrap();
    for i in 0..4 {
        let ekf = json["ekf_rmse"][i].as_f64().unwrap();
        let arekf = json["arekf_rmse"][i].as_f64().unwrap();
        assert!((ekf - arekf).abs() < 1e-9, "alpha=inf should reduce AREKF to EKF");
    }
}

#[test]
fn compare_requires_both_filters() {
    let dir = tempfile::tempdir().unwrap();
    // otherwise-valid single-filter config
    let out = run_in(
        dir.path(),
        &[
            "compare",
            "--out", "c",
            "--filter", "ekf",
            "--set", "control_source=ekf",
        ],
    );
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("both"), "{stderr}");
}

#[test]
fn unknown_override_key_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["run", "--out", "o", "--set", "bogus_key=1"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bogus_key"), "{stderr}");
}

#[test]
fn missing_config_file_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["run", "--config", "nope.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
}
