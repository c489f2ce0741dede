use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use adversarial_debias::data::synthetic::planted_gender;
use adversarial_debias::data::write_embeddings;

const BIN: &str = env!("CARGO_BIN_EXE_advdebias");
const ADULT_TRAIN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/adult/adult.data");
const ADULT_TEST: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/adult/adult.test");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("ADVDEBIAS_OUT_DIR")
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn adult(extra: &[&'static str]) -> Vec<&'static str> {
    let mut v = vec!["adult", "--train-path", ADULT_TRAIN, "--test-path", ADULT_TEST];
    v.extend_from_slice(extra);
    v
}

#[test]
fn toy_both_reports_two_runs_with_stable_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["toy", "--debias", "both", "--seed", "7", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(&dir.path().join("m.json"));
    let runs = m.as_array().unwrap();
    assert_eq!(runs.len(), 2);
    for key in [
        "command", "seed", "debias", "mode", "accuracy", "groups", "dp_gap", "eo_gap_y0",
        "eo_gap_y1", "p_value_y0", "p_value_y1", "steps", "wall_time_s",
    ] {
        assert!(runs[0].get(key).is_some(), "missing {key}");
    }
    for g in ["z0", "z1"] {
        for k in ["fpr", "fnr", "tp", "fp", "tn", "fn", "positive_rate"] {
            assert!(runs[1]["groups"][g].get(k).is_some(), "missing groups.{g}.{k}");
        }
    }
    assert_eq!(runs[0]["debias"], false);
    assert_eq!(runs[1]["debias"], true);
    assert!(runs[1]["coefficients"]["r"].as_f64().unwrap() < 0.0);
    assert!(runs[0]["coefficients"]["r"].as_f64().unwrap() > 0.0);
    for f in ["m.manifest.json", "m.baseline.ndjson", "m.debiased.ndjson"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("dp_gap"), "{text}");
}

#[test]
fn toy_sample_count_flag_reaches_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["toy", "--n", "500", "--steps", "20", "--debias", "off", "--out", "t.json"]);
    assert_eq!(out.status.code(), Some(0));
    let manifest = json(&dir.path().join("t.manifest.json"));
    assert_eq!(manifest["command"], "toy");
    assert_eq!(manifest["config"]["n"], 500);
    assert_eq!(manifest["seed"], 0);
    assert!(manifest["started_at"].as_str().unwrap().ends_with('Z'));
    // A single run is an object, not an array.
    assert!(json(&dir.path().join("t.json")).is_object());
}

#[test]
fn flags_beat_config_file_which_beats_defaults() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"steps": 30, "debias": "off", "n": 300}"#).unwrap();
    let out = run(dir.path(), &["toy", "--config", "c.json", "--out", "a.json"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&dir.path().join("a.json"))["steps"], 30);
    let out = run(dir.path(), &["toy", "--config", "c.json", "--steps", "40", "--out", "b.json"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&dir.path().join("b.json"))["steps"], 40);

    fs::write(dir.path().join("bad.json"), r#"{"step": 30}"#).unwrap();
    let out = run(dir.path(), &["toy", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn adult_report_cells_sum_to_group_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &adult(&["--debias", "off", "--steps", "200", "--out", "a.json", "--report", "a.txt"]));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(&dir.path().join("a.json"));
    let total = |g: &str| -> u64 {
        ["tp", "fp", "tn", "fn"].iter().map(|k| m["groups"][g][k].as_u64().unwrap()).sum()
    };
    assert_eq!(total("female"), 5421);
    assert_eq!(total("male"), 10860);
    let report = fs::read_to_string(dir.path().join("a.txt")).unwrap();
    assert!(report.contains("Without debiasing") && report.contains("Female") && report.contains("FNR"));
}

#[test]
fn opportunity_mode_trains_adversary_on_positives_only() {
    let dir = tempfile::tempdir().unwrap();
    let args = adult(&[
        "--mode", "opportunity", "--target-y", "1", "--debias", "on", "--steps", "100", "--out", "o.json",
    ]);
    let out = run(dir.path(), &args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(&dir.path().join("o.json"));
    assert_eq!(m["mode"], "opportunity");
    let log = fs::read_to_string(dir.path().join("o.debiased.ndjson")).unwrap();
    let sizes: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["adversary_batch"].as_u64().unwrap())
        .collect();
    assert_eq!(sizes.len(), 100);
    // About a quarter of the training rows are positive.
    let mean = sizes.iter().sum::<u64>() as f64 / sizes.len() as f64;
    assert!(sizes.iter().all(|&s| s < 128) && (20.0..45.0).contains(&mean), "mean {mean}");
}

#[test]
fn missing_dataset_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["adult", "--train-path", "nope.data", "--test-path", "nope.test"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["adult"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_3_and_keeps_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["toy", "--loss-blowup-limit", "0.1", "--out", "d.json"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("d.baseline.ndjson"), "{err}");
    assert!(dir.path().join("d.baseline.ndjson").exists());
}

#[test]
fn synthetic_embed_reports_both_runs_and_query_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["embed", "--synthetic", "--query", "he:she:doctor", "--out", "e.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let runs = json(&dir.path().join("e.json"));
    let runs = runs.as_array().unwrap();
    assert!(runs.iter().all(|r| r["w_dot_g"].is_f64() && r["w_norm"].is_f64()));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("he : she :: doctor : ?"));
    assert!(text.contains("Biased") && text.contains("Debiased"));
}

#[test]
fn embed_from_files_and_missing_words() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = planted_gender(2).unwrap();
    write_embeddings(&fixture.table, dir.path().join("vec.txt")).unwrap();
    let mut analogies = String::from(": mixed\n");
    for it in &fixture.analogies {
        analogies.push_str(&format!("{} {} {} {}\n", it.a, it.b, it.c, it.d));
    }
    analogies.push_str("he she doctor unknownword\n");
    fs::write(dir.path().join("an.txt"), analogies).unwrap();
    let base = ["embed", "--embeddings", "vec.txt", "--analogies", "an.txt", "--steps", "300"];

    let mut ok = base.to_vec();
    ok.extend(["--out", "f.json"]);
    let out = run(dir.path(), &ok);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let runs = json(&dir.path().join("f.json"));
    assert_eq!(runs[0]["dropped_analogies"], 1);

    let mut missing = base.to_vec();
    missing.extend(["--query", "he:she:astronaut"]);
    let out = run(dir.path(), &missing);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("astronaut"));
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["gradcheck", "--model", "all", "--trials", "20"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["logistic", "parity", "odds", "opportunity", "analogy", "embedding"] {
        assert!(text.contains(name), "{text}");
    }
    assert_eq!(run(dir.path(), &["gradcheck", "--tamper"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["gradcheck", "--model", "mlp"]).status.code(), Some(2));
}

#[test]
fn replay_reproduces_metrics_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["toy", "--seed", "3", "--n", "2000", "--out", "first.json"]);
    assert_eq!(out.status.code(), Some(0));
    let out = run(dir.path(), &["replay", "first.manifest.json", "--out", "second.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let a = fs::read(dir.path().join("first.json")).unwrap();
    let b = fs::read(dir.path().join("second.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn output_directory_override() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("outputs");
    let out = Command::new(BIN)
        .args(["toy", "--steps", "10", "--debias", "off", "--out", "r.json"])
        .current_dir(dir.path())
        .env("ADVDEBIAS_OUT_DIR", &target)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(target.join("r.json").exists());
    assert!(target.join("r.manifest.json").exists());
}
