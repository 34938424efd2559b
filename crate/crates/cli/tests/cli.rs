use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ribfrac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ribfrac")).args(args).output().unwrap()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
        .to_str()
        .unwrap()
        .to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: PathBuf) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn synth_into(dir: &Path, extra: &[&str]) {
    let cfg = dir.join("config.toml");
    fs::write(&cfg, "[synth]\nn_scans = 6\nn_pairs = 48\nimg_dim = 8\ntxt_dim = 8\nvolume_shape = [96, 96, 24]\n").unwrap();
    let out = ribfrac(&[&["--config", s(&cfg), "--out", s(dir), "synth"][..], extra].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn track_sets(v: &Value) -> Vec<(String, Vec<Value>)> {
    let mut sets: Vec<_> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|t| (t["scan_id"].as_str().unwrap().to_string(), t["detections"].as_array().unwrap().clone()))
        .collect();
    sets.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.len().cmp(&b.1.len())).then(format!("{:?}", a.1).cmp(&format!("{:?}", b.1))));
    sets
}

#[test]
fn tracks_match_synthetic_oracle() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path(), &["--seed", "21"]);
    let dets = dir.path().join("detections.jsonl");
    let out = ribfrac(&["--out", s(dir.path()), "track", "--detections", s(&dets)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let got = track_sets(&read_json(dir.path().join("tracks.json")));
    let want = track_sets(&read_json(dir.path().join("oracle_tracks.json")));
    assert!(!want.is_empty());
    assert_eq!(got, want);
}

#[test]
fn track_with_volumes_writes_patches() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path(), &[]);
    let dets = dir.path().join("detections.jsonl");
    let vols = dir.path().join("volumes");
    let out = ribfrac(&["--out", s(dir.path()), "track", "--detections", s(&dets), "--volumes", s(&vols)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let tracks = read_json(dir.path().join("tracks.json"));
    assert!(!tracks.as_array().unwrap().is_empty());
    for t in tracks.as_array().unwrap() {
        let patch = t["patch"].as_str().unwrap();
        assert!(fs::read(dir.path().join(patch)).unwrap().len() > 64 * 64 * 32);
        assert!(t.get("rib").is_some());
    }
}

#[test]
fn jobs_do_not_change_tracks() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path(), &[]);
    let dets = dir.path().join("detections.jsonl");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (o, j) in [(&a, "1"), (&b, "4")] {
        assert!(ribfrac(&["--jobs", j, "--out", s(o), "track", "--detections", s(&dets)]).status.success());
    }
    assert_eq!(fs::read(a.join("tracks.json")).unwrap(), fs::read(b.join("tracks.json")).unwrap());
}

#[test]
fn golden_worksheets_validate_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let sheets = [fixture("patient84.jsonl"), fixture("patient88.jsonl")];
    let out = ribfrac(&["--out", s(dir.path()), "validate", &sheets[0], &sheets[1]]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let out = ribfrac(&["--out", s(dir.path()), "ribscore", &sheets[0], &sheets[1]]);
    assert!(out.status.success());
    let scores: Vec<Value> = fs::read_to_string(dir.path().join("ribscore.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(scores[0]["score"], 1);
    assert_eq!(scores[1]["score"], 5);
}

#[test]
fn describe_writes_sentence() {
    let dir = tempfile::tempdir().unwrap();
    let out = ribfrac(&["--out", s(dir.path()), "describe", &fixture("description.jsonl")]);
    assert!(out.status.success());
    let want = fs::read_to_string(fixture("description.txt")).unwrap();
    let written = fs::read_to_string(dir.path().join("descriptions.jsonl")).unwrap();
    assert!(written.contains(want.trim_end()), "{written}");
}

#[test]
fn invalid_worksheet_is_a_module_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    let text = fs::read_to_string(fixture("description.jsonl")).unwrap().replace("\"rib\":7", "\"rib\":13");
    fs::write(&bad, text).unwrap();
    let out = ribfrac(&["--out", s(dir.path()), "validate", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "bogus_key = 1\n").unwrap();
    assert_eq!(ribfrac(&["--config", s(&cfg), "synth"]).status.code(), Some(2));
    assert_eq!(ribfrac(&["--conf-min", "2", "--out", s(dir.path()), "synth"]).status.code(), Some(2));
    let missing = dir.path().join("nope.jsonl");
    let out = ribfrac(&["--out", s(dir.path()), "track", "--detections", s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
}

#[test]
fn manifest_records_digests() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path(), &["--seed", "4"]);
    let m = read_json(dir.path().join("synth.manifest.json"));
    assert_eq!(m["seed"], 4);
    let outputs = m["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["path"] == "dataset.rfd"));
    assert!(outputs.iter().all(|o| o["sha256"].as_str().unwrap().len() == 64));
}
