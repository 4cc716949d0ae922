use std::path::Path;
use std::process::{Command, Output};

fn gencomm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gencomm"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn error_line(out: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {err}"))
}

fn write_config(dir: &Path, name: &str, json: &str) {
    std::fs::write(dir.join(name), json).unwrap();
}

#[test]
fn preset_output_is_a_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = gencomm(&["preset", "fading_clip"], dir.path());
    assert!(out.status.success());
    let cfg =
        gencomm::ScenarioConfig::from_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, gencomm::ScenarioConfig::preset("fading_clip").unwrap());
}

#[test]
fn run_writes_csv_to_configured_output() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "s.json",
        r#"{"name":"s","trials":2,"link":{"csnr_db":[10]},"output":"s.csv","reference_samples":0}"#,
    );
    let out = gencomm(&["run", "s.json", "--trace", "traces"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert!(csv.contains(
        "\ntrial,seed,csnr_db,variant,steps,mse,psnr_db,l_m_final,d_h,success,frechet\n"
    ));
    assert!(csv.contains("# config {"));
    assert_eq!(
        std::fs::read_dir(dir.path().join("traces"))
            .unwrap()
            .count(),
        2
    );

    let out = gencomm(&["run", "s.json", "--out", "-"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let body = |s: &str| {
        s.lines()
            .filter(|l| !l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(body(&stdout), body(&csv));
}

#[test]
fn sweep_writes_members_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "s.json",
        r#"{"name":"s","trials":1,"link":{"csnr_db":[5]},"reference_samples":0}"#,
    );
    let out = gencomm(
        &[
            "sweep",
            "s.json",
            "--axis",
            "zeta",
            "--values",
            "0.3,0.9",
            "--out-dir",
            "o",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let o = dir.path().join("o");
    assert!(o.join("s_zeta_0.3.csv").is_file());
    assert!(o.join("s_zeta_0.9.csv").is_file());
    let summary = std::fs::read_to_string(o.join("s_zeta_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn unknown_axis_exits_nonzero_with_error_line() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "s.json", "{}");
    let out = gencomm(
        &["sweep", "s.json", "--axis", "beta", "--values", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert_eq!(e["error"]["kind"], "unknown_axis");
    assert!(e["error"]["message"].as_str().unwrap().contains("beta"));
}

#[test]
fn config_errors_report_field_and_line() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "bad.json", "{\n  \"trials\": -3\n}");
    let out = gencomm(&["run", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert_eq!(e["error"]["kind"], "config");
    let msg = e["error"]["message"].as_str().unwrap();
    assert!(msg.contains("`trials`") && msg.contains("line 2"), "{msg}");
}

#[test]
fn inconsistent_blind_config_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = gencomm::ScenarioConfig::preset("blind").unwrap();
    cfg.sampler.variant = gencomm::config::Variant::Standard;
    write_config(dir.path(), "b.json", &cfg.to_json());
    let out = gencomm(&["run", "b.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"]["kind"], "invalid_scenario");
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gencomm(&["run", "nope.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"]["kind"], "io");
}

#[test]
fn check_grad_prints_passing_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = gencomm(&["check-grad", "--states", "3"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        table.lines().count(),
        1 + gencomm::suites::grad_setups().unwrap().len()
    );
    assert!(table.lines().skip(1).all(|l| l.ends_with("PASS")));
}

#[test]
fn oracle_reports_failure_with_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = gencomm(&["oracle", "--samples", "3"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["error"]["kind"], "check_failed");
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn train_codec_writes_a_readable_file() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "t.json",
        r#"{"codec":{"kind":"mlp","k":4,"hidden":8,"training":{"steps":20,"validation_samples":20}}}"#,
    );
    let out = gencomm(&["train-codec", "t.json", "--out", "c.bin"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["steps"], 20);
    let codec = gencomm::codec_file::read(&dir.path().join("c.bin")).unwrap();
    assert_eq!((codec.m, codec.k), (16, 4));

    write_config(dir.path(), "lin.json", "{}");
    let out = gencomm(&["train-codec", "lin.json", "--out", "c2.bin"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
