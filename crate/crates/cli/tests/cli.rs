use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
seed = 4
[data.synthetic]
n_students = 200
n_questions = 15
n_kcs = 4
slip = 0.1
guess = 0.2
density = 0.4
seed = 4
[cdm]
epochs = 5
[split]
ratio = 0.1
[attack.nn]
max_epochs = 30
[radar]
k = 4
n = 3
"#;

fn cdaudit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdaudit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = cdaudit(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_json(out: &Output) -> Value {
    assert_eq!(out.status.code(), Some(1));
    serde_json::from_slice(out.stderr.trim_ascii()).expect("stderr is one JSON object")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn pipeline_writes_every_artifact_and_the_manifest_hashes_them() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), SMALL).unwrap();
    let base = ["--config", "run.toml", "--out", "o"];
    let with = |extra: &[&str]| -> Vec<String> { base.iter().chain(extra).map(|s| s.to_string()).collect() };
    let run = |extra: &[&str]| {
        let args = with(extra);
        ok(d, &args.iter().map(String::as_str).collect::<Vec<_>>());
    };

    run(&["gen-data"]);
    run(&["train"]);
    run(&["unlearn", "--defense", "ssd", "--alpha", "2.0", "--lambda", "0.3"]);
    run(&["unlearn", "--defense", "amnesiac"]);
    run(&["attack", "--attacker", "gbdt-black", "--attacker", "mia-grey"]);
    run(&["radar"]);

    let o = d.join("o");
    for f in [
        "data/records.csv",
        "data/q_matrix.csv",
        "data/mastery.csv",
        "checkpoints/split_plan.json",
        "checkpoints/neuralcd_orig.json",
        "checkpoints/neuralcd_retrain.json",
        "checkpoints/neuralcd_ssd.json",
        "checkpoints/neuralcd_amnesiac.json",
        "checkpoints/attacker_neuralcd_gbdt-black.json",
        "checkpoints/attacker_neuralcd_mia-grey.json",
        "reports/train_neuralcd.json",
        "reports/unlearn_neuralcd_ssd.json",
        "reports/attack_neuralcd_mia-grey.json",
        "reports/radar_roundtrip.csv",
        "reports/radar_summary.json",
        "charts/chart_0002.png",
    ] {
        assert!(o.join(f).is_file(), "missing {f}");
    }

    let ssd = read_json(&o.join("reports/unlearn_neuralcd_ssd.json"));
    assert_eq!(ssd["defense"]["alpha"], 2.0);
    let attack = read_json(&o.join("reports/attack_neuralcd_mia-grey.json"));
    assert!(attack["orig"]["auc_mia"].is_f64() && attack["retrain"]["auc_mia"].is_f64());
    let radar = read_json(&o.join("reports/radar_summary.json"));
    assert!(radar["canny_mae"].as_f64().unwrap() <= 0.03);
    // k = 4 axes times n = 3 charts, plus the header
    let csv = std::fs::read_to_string(o.join("reports/radar_roundtrip.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);

    let manifest = read_json(&o.join("manifest.json"));
    assert_eq!(manifest["format"], "manifest/1");
    for cmd in ["gen-data", "train", "unlearn", "attack", "radar"] {
        let entry = &manifest["runs"][cmd];
        assert_eq!(entry["seed"], 4, "{cmd}");
        for file in entry["outputs"].as_array().unwrap() {
            let path = o.join(file["path"].as_str().unwrap());
            let digest = sha2_hex(&path);
            assert_eq!(file["sha256"], digest.as_str(), "{cmd}: {path:?}");
        }
    }
    // the later unlearn run replaced the earlier entry
    assert_eq!(
        manifest["runs"]["unlearn"]["effective_config"]["flags"]["defense"]["method"],
        "amnesiac"
    );
}

fn sha2_hex(path: &Path) -> String {
    // hash with the system tool, not the code under test
    let out = Command::new("sha256sum")
        .arg(path)
        .output()
        .expect("sha256sum available");
    String::from_utf8(out.stdout)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn generated_csv_feeds_back_in_as_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("gen.toml"), SMALL).unwrap();
    ok(d, &["--config", "gen.toml", "--out", "g", "gen-data"]);
    let csv_cfg = r#"
seed = 4
[data]
records = "g/data/records.csv"
q_matrix = "g/data/q_matrix.csv"
[cdm]
epochs = 3
"#;
    std::fs::write(d.join("csv.toml"), csv_cfg).unwrap();
    ok(
        d,
        &[
            "--config", "csv.toml", "--out", "c", "train", "--model", "orig", "--arch", "kscd",
        ],
    );
    assert!(d.join("c/checkpoints/kscd_orig.json").is_file());
    assert!(!d.join("c/checkpoints/kscd_retrain.json").exists());
    let manifest = read_json(&d.join("c/manifest.json"));
    let inputs = manifest["runs"]["train"]["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 2);
}

#[test]
fn unknown_config_key_fails_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "[cdm]\nepoch = 3\n").unwrap();
    let err = error_json(&cdaudit(d, &["--config", "bad.toml", "--out", "o", "train"]));
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("epoch"));
    assert!(!d.join("o").exists());
}

#[test]
fn out_of_range_ratio_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = error_json(&cdaudit(dir.path(), &["--out", "o", "train", "--ratio", "0.5"]));
    assert_eq!(err["error"]["kind"], "config");
}

#[test]
fn attack_without_a_checkpoint_reports_io() {
    let dir = tempfile::tempdir().unwrap();
    let err = error_json(&cdaudit(dir.path(), &["--out", "o", "attack"]));
    assert_eq!(err["error"]["kind"], "io");
}

#[test]
fn llm_without_endpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cdaudit"))
        .current_dir(dir.path())
        .args(["--out", "o", "radar", "--n", "1", "--llm", "general"])
        .env_remove("CDAUDIT_LLM_URL")
        .output()
        .unwrap();
    let err = error_json(&out);
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("CDAUDIT_LLM_URL"));
}

#[test]
fn a_saved_chart_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), SMALL).unwrap();
    ok(d, &["--config", "run.toml", "--out", "o", "radar"]);
    ok(
        d,
        &[
            "--config",
            "run.toml",
            "--out",
            "o",
            "radar",
            "--image",
            "o/charts/chart_0001.png",
        ],
    );
    let truth: Vec<f64> = std::fs::read_to_string(d.join("o/reports/radar_roundtrip.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|f| f[0] == "1")
        .map(|f| f[2].parse().unwrap())
        .collect();
    let report = read_json(&d.join("o/reports/radar_extract.json"));
    let est = report["canny"]["estimates"].as_array().unwrap();
    assert_eq!(est.len(), 4);
    for (e, t) in est.iter().zip(&truth) {
        assert!((e.as_f64().unwrap() - t).abs() <= 0.03);
    }
}
