//! Drives the `coordkit` binary: exit codes, file outputs and reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn coordkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coordkit")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = "[synth]\nn_persons = 2\nduration = 60\n[intervention]\nkind = \"dampen\"\nstrengths = [10]\n";

#[test]
fn unknown_config_key_exits_1_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[analysis]\nslice_secs = 30\n");
    let o = coordkit(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("slice_secs"), "{}", stderr(&o));
}

#[test]
fn invalid_value_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[rqa]\ntarget_rr = 2.0\n");
    let o = coordkit(&["metrics", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn bad_arguments_exit_1_and_help_exits_0() {
    assert_eq!(coordkit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(coordkit(&["--help"]).status.code(), Some(0));
}

#[test]
fn report_without_artifacts_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = coordkit(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn synth_then_intervene_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let scene = dir.path().join("scene");
    let o = coordkit(&["synth", "--config", &cfg, "--seed", "3", "--out", scene.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["manifest.json", "person0.bvh", "person0.wav", "person1.bvh", "person1.wav"] {
        assert!(scene.join(f).is_file(), "{f} missing");
    }
    let o = coordkit(&["intervene", "--scene", scene.to_str().unwrap(), "--kind", "delay", "--strength", "0.25"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let listed = String::from_utf8_lossy(&o.stdout);
    assert_eq!(listed.lines().count(), 2);
    assert!(listed.lines().all(|l| l.ends_with(".wav") && Path::new(l).is_file()));
}

#[test]
fn run_is_reproducible_and_stages_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = coordkit(&["run", "--config", &cfg, "--seed", "9", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    // run-metadata.json records the output path, so it legitimately differs
    for f in ["metrics.csv", "report.md"] {
        assert!(std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    // stats and report rerun from the artifacts alone reproduce the report
    let report = std::fs::read(a.join("report.md")).unwrap();
    for stage in ["stats", "report"] {
        let o = coordkit(&[stage, "--config", &cfg, "--seed", "9", "--out", a.to_str().unwrap()]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    assert!(std::fs::read(a.join("report.md")).unwrap() == report);
}
