use std::path::Path;
use std::process::{Command, Output};

fn gaitprint(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaitprint"))
        .args(args)
        .current_dir(cwd)
        .env_remove("GAITPRINT_CACHE_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

#[test]
fn simulate_then_run_produces_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let sim = gaitprint(&["simulate", "--n", "6", "--seed", "7", "--out", "data"], dir);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    assert!(dir.join("data/S00005.csv").exists());
    assert!(dir.join("data/labels.csv").exists());

    std::fs::write(
        dir.join("c.json"),
        r#"{"input": "data", "output": "out", "seed": 3, "detector": {"kind": "oracle"}}"#,
    )
    .unwrap();
    let run = gaitprint(&["run", "--config", "c.json"], dir);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["reports"][0]["n"], 6);
    assert!(dir.join("out/accuracy.svg").exists());

    // unchanged rerun resumes from cache; the worker count does not matter
    let again = gaitprint(&["run", "--config", "c.json", "--workers", "2"], dir);
    let stdout = String::from_utf8_lossy(&again.stdout);
    assert_eq!(stdout.matches("cached").count(), 6, "{stdout}");

    let plot = gaitprint(&["plot", "--report", "out/report.json", "--out", "plots"], dir);
    assert!(plot.status.success());
    assert!(dir.join("plots/accuracy.csv").exists());
    let features = std::fs::read_dir(dir.join("out/cache"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("fingerprint-"))
        .unwrap()
        .join("features.bin");
    let plot = gaitprint(
        &["plot", "--features", features.to_str().unwrap(), "--participant", "S00001", "--out", "plots"],
        dir,
    );
    assert!(plot.status.success(), "{}", String::from_utf8_lossy(&plot.stderr));
    assert!(dir.join("plots/fingerprint-S00001.svg").exists());
}

#[test]
fn single_stage_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert!(gaitprint(&["simulate", "--n", "2", "--days", "1", "--out", "data"], dir).status.success());
    let out = gaitprint(&["segment", "--input", "data", "--output", "out"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("segment") && !stdout.contains("fingerprint"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // configuration errors
    assert_eq!(gaitprint(&["run", "--variant", "oversample:1.5"], dir).status.code(), Some(1));
    assert_eq!(gaitprint(&["run", "--config", "missing.json"], dir).status.code(), Some(1));
    assert_eq!(gaitprint(&["run", "--minutes", "4"], dir).status.code(), Some(1));
    // data errors
    let out = gaitprint(&["run", "--input", "nowhere"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage ingest"));
    std::fs::create_dir_all(dir.join("bad")).unwrap();
    std::fs::write(
        dir.join("bad/p.csv"),
        "participant_id,timestamp,x,y,z\np,2024-01-01T00:00:00,0,0,1\np,2023-01-01T00:00:00,0,0,1\n",
    )
    .unwrap();
    let out = gaitprint(&["ingest", "--input", "bad", "--output", "o"], dir);
    assert_eq!(out.status.code(), Some(2));
}
