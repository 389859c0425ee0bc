use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_buglistener"))
        .current_dir(crate_dir())
        .env("BUGLISTENER_LOG", "warn")
        .args(["--config", "fixtures/e2e/config.toml", "--out"])
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn error_record(o: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&o.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).expect("an error record on stderr");
    serde_json::from_str(line).unwrap()
}

#[test]
fn full_pipeline_writes_reports_for_flagged_dialogs() {
    let out = tempfile::tempdir().unwrap();
    let o = run(out.path(), &["ingest", "fixtures/e2e/chat/alpha.jsonl", "fixtures/e2e/chat/beta.jsonl"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for verb in ["disentangle", "train-bri", "predict-bri", "train-brs", "synthesize", "eval"] {
        let o = run(out.path(), &[verb]);
        assert!(o.status.success(), "{verb}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let dialogs = std::fs::read_to_string(out.path().join("dialogs.jsonl")).unwrap();
    assert_eq!(dialogs.lines().count(), 10);
    let index: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("reports/index.json")).unwrap()).unwrap();
    let written: Vec<&str> = index.iter().filter_map(|e| e["markdown"].as_str()).collect();
    assert!(!written.is_empty());
    for rel in written {
        let md = out.path().join("reports").join(rel);
        assert!(std::fs::read_to_string(&md).unwrap().contains("## Observed Behavior"));
        assert!(md.with_extension("json").exists());
    }
    // the crash dialog of the first project is a bug report
    assert!(out.path().join("reports/alpha/d-a00-0.md").exists());
    for m in ["bri.json", "brs.json", "eval.json"] {
        assert!(out.path().join("metrics").join(m).exists(), "{m}");
    }
    assert!(out.path().join("checkpoints/bri/manifest.json").exists());
}

#[test]
fn predict_without_checkpoint_is_a_distinct_error() {
    let out = tempfile::tempdir().unwrap();
    let o = run(out.path(), &["predict-bri", "--checkpoint", "no/such/dir"]);
    assert_eq!(o.status.code(), Some(6));
    let rec = error_record(&o);
    assert_eq!(rec["error"], "checkpoint_not_found");
    assert_eq!(rec["exit_code"], 6);
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[bri\nbatch_size = ").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_buglistener"))
        .args(["--config"])
        .arg(&cfg)
        .arg("config")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(5));
    assert_eq!(error_record(&o)["error"], "config_error");
}

#[test]
fn checkpoint_of_the_wrong_kind_is_a_schema_mismatch() {
    let out = tempfile::tempdir().unwrap();
    let ck = out.path().join("ck");
    std::fs::create_dir_all(&ck).unwrap();
    std::fs::write(ck.join("params.safetensors"), b"").unwrap();
    std::fs::write(
        ck.join("manifest.json"),
        r#"{"kind":"brs","version":1,"seed":0,"encoder":{},"details":null}"#,
    )
    .unwrap();
    let o = run(out.path(), &["predict-bri", "--checkpoint", ck.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(7));
    assert_eq!(error_record(&o)["error"], "schema_mismatch");
}

#[test]
fn missing_input_file_is_an_io_error() {
    let out = tempfile::tempdir().unwrap();
    let o = run(out.path(), &["ingest", "fixtures/none.jsonl"]);
    assert_eq!(o.status.code(), Some(9));
    assert_eq!(error_record(&o)["error"], "io_error");
}

#[test]
fn config_verb_prints_loadable_toml() {
    let o = Command::new(env!("CARGO_BIN_EXE_buglistener"))
        .current_dir(crate_dir())
        .args(["--config", "fixtures/e2e/config.toml", "config"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("frozen_layers = 1"));
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), &text).unwrap();
    let back = buglistener::config::PipelineConfig::load(Some(&dir.path().join("c.toml"))).unwrap();
    let orig = buglistener::config::PipelineConfig::load(Some(&crate_dir().join("fixtures/e2e/config.toml"))).unwrap();
    assert_eq!(back, orig);
}
