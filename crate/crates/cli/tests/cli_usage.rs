use std::process::Command;

fn echodx(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_echodx")).args(args).output().unwrap()
}

#[test]
fn help_exits_zero() {
    let out = echodx(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["synth", "preprocess", "split", "train", "eval", "embed", "attribute", "rank-normal", "all"] {
        assert!(text.contains(cmd), "{cmd} missing from usage");
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(echodx(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(echodx(&["train", "--bogus"]).status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    std::fs::write(&cfg, "seed=1\nfoo=1\n").unwrap();
    let out = echodx(&["all", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("foo"));
    assert_eq!(echodx(&["train", "--set", "net.stage_channels=0"]).status.code(), Some(2));
}

#[test]
fn missing_manifest_names_the_train_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = echodx(&[
        "train",
        "--manifest",
        dir.path().join("absent.tsv").to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `train`"));
}

#[test]
fn evaluation_without_checkpoint_fails_at_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let synth = echodx(&["synth", "--out", data.to_str().unwrap(), "--per-class", "4", "--seed", "1"]);
    assert_eq!(synth.status.code(), Some(0));
    let manifest = data.join("manifest.tsv");
    let run = dir.path().join("run");
    let split = echodx(&["split", "--manifest", manifest.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert_eq!(split.status.code(), Some(0));
    let text = std::fs::read_to_string(run.join("split.tsv")).unwrap();
    assert_eq!(text.lines().next(), Some("sample_id\tsubset"));
    assert_eq!(text.lines().count(), 13);
    let out = echodx(&["eval", "--manifest", manifest.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `eval`"));
}

#[test]
fn thread_variable_must_be_a_count() {
    let out = Command::new(env!("CARGO_BIN_EXE_echodx"))
        .env("ECHODX_THREADS", "many")
        .args(["split"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
