use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn userdist(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_userdist"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
seed = 1

[paths]
interactions = "interactions.tsv"
content = "content.tsv"
out = "run"

[tokenizer]
min_count = 1
max_len = 32

[cf]
dim = 8
epochs = 10

[encoder]
dim = 8
layers = 1
adapter_rank = 2
adapter_alpha = 4.0
max_len = 32

[train]
max_epochs = 2
negatives_per_item = 16
"#;

/// A synthetic corpus in `dir` with the small config above.
fn setup(dir: &Path) -> String {
    let o = userdist(&["synth", "--out", dir.to_str().unwrap(), "--users", "80", "--items", "50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let config = dir.join("small.toml");
    fs::write(&config, SMALL).unwrap();
    config.to_str().unwrap().to_string()
}

#[test]
fn ingest_alone_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let o = userdist(&["ingest", "--config", &config]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("dataset 80 users, 50 items"), "{}", stdout(&o));
    assert!(dir.path().join("run/split_report.txt").exists());
}

#[test]
fn run_all_twice_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let mut reports = Vec::new();
    for out in ["a", "b"] {
        let out = dir.path().join(out);
        let o = userdist(&["run-all", "--config", &config, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("recall"), "{}", stdout(&o));
        reports.push(fs::read(out.join("metrics.txt")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);

    let again = userdist(&["run-all", "--config", &config, "--out", dir.path().join("a").to_str().unwrap()]);
    assert!(stdout(&again).contains("up to date"));
}

#[test]
fn selected_stages_and_missing_upstream() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let o = userdist(&["run-all", "--config", &config, "--stage", "ingest", "--stage", "cf"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("run/cf.ckpt").exists());
    assert!(!dir.path().join("run/encoder.ckpt").exists());

    let o = userdist(&["infer", "--config", &config]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("run stage `train` first"), "{}", stderr(&o));
}

#[test]
fn seed_override_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    assert!(userdist(&["ingest", "--config", &config]).status.success());
    let o = userdist(&["ingest", "--config", &config, "--seed", "9"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));
    assert!(userdist(&["ingest", "--config", &config, "--seed", "9", "--force"]).status.success());
}

#[test]
fn describe_checkpoint_and_truncated_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    assert!(userdist(&["run-all", "--config", &config, "--stage", "ingest", "--stage", "cf"]).status.success());
    let ckpt = dir.path().join("run/cf.ckpt");
    let o = userdist(&["describe", ckpt.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("behavior embeddings 80×8 users"), "{}", stdout(&o));

    let bytes = fs::read(&ckpt).unwrap();
    let cut = dir.path().join("cut.ckpt");
    fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
    let o = userdist(&["describe", cut.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("integrity"), "{}", stderr(&o));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "seed = 1\n[cf]\ndimension = 8\n").unwrap();
    let o = userdist(&["ingest", "--config", config.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("dimension"), "{}", stderr(&o));
}
