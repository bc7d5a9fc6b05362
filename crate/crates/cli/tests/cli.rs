//! End-to-end behavior of the `surfmc` binary: exit codes, gating,
//! artifact determinism, and the sample/report subcommands.

use std::path::Path;
use std::process::Command;

fn surfmc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_surfmc"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#"
[batch]
count = 20000

[sde]
ensemble = 4000
dt = 0.02
"#;

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = surfmc().arg("moments").arg("--definitely-not-a-flag").output().unwrap();
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = surfmc().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_reports_every_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[measure]\nm = 2\nweight_s = 1.0\n\n[batch]\ncount = 0\n",
    );
    let out = surfmc().arg("moments").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("weight_s"), "{stderr}");
    assert!(stderr.contains("count"), "{stderr}");
}

#[test]
fn exact_scheme_is_rejected_for_quartic_measure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = surfmc()
        .arg("sde")
        .arg("--config")
        .arg(&cfg)
        .arg("--scheme")
        .arg("exact_ou")
        .arg("--m")
        .arg("2")
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exact_ou"));
}

#[test]
fn sample_writes_binary_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let status = surfmc()
        .arg("sample")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .arg("--count")
        .arg("500")
        .status()
        .unwrap();
    assert!(status.success());
    let bin = std::fs::read(out_dir.join("samples.bin")).unwrap();
    assert_eq!(&bin[..4], b"SMCB");
    let status = surfmc()
        .arg("sample")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .arg("--count")
        .arg("500")
        .arg("--format")
        .arg("csv")
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out_dir.join("samples.csv")).unwrap();
    assert_eq!(csv.lines().count(), 500);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 16);
}

#[test]
fn report_without_artifacts_prints_empty_notice() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = surfmc()
        .arg("report")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("nothing_here"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("empty report"));
}

#[test]
fn wrong_divergence_variant_fails_and_blocks_surface_suites() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[batch]
count = 60000

[sde]
ensemble = 2000
dt = 0.05

[level]
kind = "sphere"

[divergence]
sphere_variant = "q2x_norm"

[suites]
enabled = ["divergence", "surface", "perimeter"]
"#,
    );
    let out_dir = dir.path().join("out");
    let out = surfmc()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["all_pass"], false);
    let suites = report["suites"].as_array().unwrap();
    let divergence =
        suites.iter().find(|s| s["suite"] == "divergence").expect("divergence suite present");
    let config_law = divergence["records"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["id"] == "divergence.config_law")
        .unwrap();
    assert_eq!(config_law["status"], "fail");
    let surface = suites.iter().find(|s| s["suite"] == "surface").unwrap();
    assert!(surface["records"]
        .as_array()
        .unwrap()
        .iter()
        .all(|r| r["status"] == "blocked"));
    let perimeter = suites.iter().find(|s| s["suite"] == "perimeter").unwrap();
    assert!(perimeter["records"]
        .as_array()
        .unwrap()
        .iter()
        .all(|r| r["status"] == "blocked"));
}

#[test]
fn reruns_and_worker_counts_give_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[batch]
count = 30000

[sde]
ensemble = 3000
dt = 0.02

[suites]
enabled = ["divergence", "surface", "sde"]
"#,
    );
    let run = |out_dir: &Path, workers: &str| {
        surfmc()
            .arg("run")
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(out_dir)
            .arg("--workers")
            .arg(workers)
            .output()
            .unwrap()
    };
    let d1 = dir.path().join("w1");
    let d2 = dir.path().join("w3");
    let d3 = dir.path().join("rerun");
    run(&d1, "1");
    run(&d2, "3");
    run(&d3, "1");
    for name in
        ["suite_divergence.json", "suite_surface.json", "suite_sde.json", "surface_density.csv", "sde_trajectory.csv"]
    {
        let a = std::fs::read(d1.join(name)).unwrap();
        let b = std::fs::read(d2.join(name)).unwrap();
        let c = std::fs::read(d3.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs across worker counts");
        assert_eq!(a, c, "{name} differs across reruns");
    }
}

#[test]
fn resolved_config_echo_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    surfmc()
        .arg("moments")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .arg("--seed")
        .arg("7")
        .output()
        .unwrap();
    let echoed = std::fs::read_to_string(out_dir.join("resolved_config.toml")).unwrap();
    // every defaulted field is present in the echo
    for key in ["schema_version", "weight_c", "se_multiplier", "shard_size", "horizon"] {
        assert!(echoed.contains(key), "echo missing {key}:\n{echoed}");
    }
    assert!(echoed.contains("seed = 7"));
}

#[test]
fn resolved_config_reruns_to_an_identical_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[batch]
count = 15000

[sde]
ensemble = 2000
dt = 0.02

[suites]
enabled = ["moments", "fejer"]
"#,
    );
    let out_dir = dir.path().join("out");
    surfmc().arg("run").arg("--config").arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    let first = std::fs::read(out_dir.join("report.json")).unwrap();
    // rerun from the echoed resolved config
    let resolved = out_dir.join("resolved_config.toml");
    surfmc().arg("run").arg("--config").arg(&resolved).output().unwrap();
    let second = std::fs::read(out_dir.join("report.json")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn surface_closed_form_grid_prints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = surfmc()
        .arg("surface")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .arg("--kind")
        .arg("hyperplane")
        .arg("--m")
        .arg("1")
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("r,q1_estimate,q1_closed_form"), "{stdout}");
    let grid_lines = stdout.lines().filter(|l| l.contains(',') && !l.contains("r,q1")).count();
    assert!(grid_lines >= 10, "{stdout}");
}
