use std::fs;
use std::path::PathBuf;

use ribfrac_core::annotation::{generate_description, parse_worksheet};
use ribfrac_core::eval::{compute_metrics, HeadSamples};
use ribfrac_core::ribscore::compute_ribscore;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn score(name: &str) -> (u8, String) {
    let w = parse_worksheet(&fs::read(fixture(name)).unwrap()).unwrap();
    let r = compute_ribscore(&w.scan_id, &w.annotations);
    let letters: String = r
        .flags
        .iter()
        .zip("ABCDEF".chars())
        .filter(|(f, _)| **f)
        .map(|(_, l)| l)
        .collect();
    (r.score, letters)
}

#[test]
fn patient_84_scores_one() {
    assert_eq!(score("patient84.jsonl"), (1, "E".to_string()));
}

#[test]
fn patient_88_scores_five() {
    assert_eq!(score("patient88.jsonl"), (5, "ACDEF".to_string()));
}

#[test]
fn description_sentence() {
    let w = parse_worksheet(&fs::read(fixture("description.jsonl")).unwrap()).unwrap();
    let mut got = generate_description(&w.annotations[0]);
    got.push('\n');
    assert_eq!(got, fs::read_to_string(fixture("description.txt")).unwrap());
}

#[derive(serde::Deserialize)]
struct Samples {
    dataset: String,
    heads: Vec<HeadSamples>,
}

#[test]
fn metrics_table() {
    let s: Samples = serde_json::from_slice(&fs::read(fixture("metrics_samples.json")).unwrap()).unwrap();
    let table = compute_metrics(&s.dataset, &s.heads).unwrap().to_table();
    assert_eq!(table, fs::read_to_string(fixture("metrics_table.txt")).unwrap());
}
