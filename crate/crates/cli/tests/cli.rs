use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn semiabc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semiabc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.json");
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

const GAUSSIAN: &str = r#"{
  "model": "gaussian_location",
  "seed": 42,
  "pilot": {"M": 3000},
  "construct": {"M": 3000},
  "main": {"M": 20000, "accept_fraction": 0.02}
}"#;

fn sorted_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn chained_stages_match_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), GAUSSIAN);
    let staged = tmp.path().join("staged");
    let full = tmp.path().join("full");
    let staged_s = staged.display().to_string();
    for cmd in ["simulate", "pilot", "construct", "infer", "report"] {
        let out = semiabc(&[cmd, "--config", &cfg, "--out", &staged_s]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = semiabc(&["infer", "--full", "--config", &cfg, "--out", &full.display().to_string()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let full_files = sorted_files(&full);
    assert!(full_files.contains(&"posterior.csv".to_string()));
    for name in &full_files {
        let a = fs::read(full.join(name)).unwrap();
        let b = fs::read(staged.join(name)).unwrap_or_else(|_| panic!("staged run lacks {name}"));
        assert!(a == b, "{name} differs between staged and full runs");
    }
}

#[test]
fn report_shows_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), GAUSSIAN);
    let dir = tmp.path().join("out").display().to_string();
    assert!(semiabc(&["infer", "--full", "--config", &cfg, "--out", &dir]).status.success());
    let out = semiabc(&["report", "--config", &cfg, "--out", &dir]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().find(|l| l.starts_with("coordinate:0")).expect("target row");
    assert!(line.contains("0.800000"), "{line}");
    assert!(tmp.path().join("out/report.csv").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out").display().to_string();

    let bad = write_config(
        tmp.path(),
        r#"{"model": "gaussian_location", "seed": 1, "main": {"accept_fraction": 1.5}}"#,
    );
    let out = semiabc(&["simulate", "--config", &bad, "--out", &dir]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("main.accept_fraction"));

    // A single observation has a constant sample sd: the projector
    // regression is rank deficient.
    let degenerate = write_config(
        tmp.path(),
        r#"{"model": "gaussian_location:n=1", "seed": 1, "pilot": {"M": 500},
            "construct": {"M": 500}, "main": {"M": 1000}}"#,
    );
    let out = semiabc(&["infer", "--full", "--config", &degenerate, "--out", &dir]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let ok = write_config(tmp.path(), GAUSSIAN);
    assert_eq!(semiabc(&["simulate", "--config", &ok, "--out", &dir]).status.code(), Some(0));
    assert_eq!(semiabc(&["bogus"]).status.code(), Some(1));
}

#[test]
fn missing_and_mismatched_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), GAUSSIAN);
    let dir = tmp.path().join("out").display().to_string();

    let out = semiabc(&["pilot", "--config", &cfg, "--out", &dir]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pilot_batch.json"));

    assert!(semiabc(&["simulate", "--config", &cfg, "--out", &dir]).status.success());
    let out = semiabc(&["pilot", "--config", &cfg, "--out", &dir, "--seed", "7"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("provenance mismatch"));
}

#[test]
fn marginal_and_experiment_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
  "model": "gaussian_location",
  "seed": 5,
  "pilot": {"M": 2000},
  "construct": {"M": 2000},
  "main": {"M": 5000, "accept_fraction": 0.05},
  "experiment": {"strategies": ["joint"], "replicates": 3}
}"#,
    );
    let dir = tmp.path().join("out");
    let d = dir.display().to_string();
    assert!(semiabc(&["infer", "--full", "--config", &cfg, "--out", &d]).status.success());
    let out = semiabc(&["marginal", "--config", &cfg, "--out", &d, "--threads", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("posterior_marginal.csv").exists());
    assert!(dir.join("marginal_0.json").exists());

    let out = semiabc(&["experiment", "--config", &cfg, "--out", &d]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.join("experiment.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}
