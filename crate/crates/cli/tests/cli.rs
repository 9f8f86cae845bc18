use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn mdi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdi"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mdi(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &[&str] = &[
    "--set",
    "synth.users_per_city=4",
    "--set",
    "synth.tweets_per_user=6",
    "--set",
    "synth.test_users_per_city=1",
];

const TINY_MODEL: &[&str] = &["--set", "epochs=2", "--set", "embed_dim=8", "--set", "units=8"];

fn synth(dir: &Path) {
    let mut args = SMALL.to_vec();
    args.extend(["synth", "--out", "syn"]);
    ok(dir, &args);
}

#[test]
fn identity_predictions_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let rows = ["a", "b", "c", "b", "a"]
        .iter()
        .enumerate()
        .map(|(i, l)| format!(r#"{{"id":"r{i}","user_id":"u{i}","gold":"{l}","pred":"{l}","confidence":0.9}}"#))
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(dir.path().join("preds.jsonl"), rows).unwrap();
    ok(dir.path(), &["eval", "--predictions", "preds.jsonl", "--out", "report.json"]);
    let report = json(dir.path().join("report.json"));
    assert_eq!(report["accuracy"], 1.0);
    assert_eq!(report["macro_f1"], 1.0);
    assert_eq!(report["n"], 5);
    let manifest = json(dir.path().join("report.json.manifest.json"));
    assert_eq!(manifest["command"], "eval");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(mdi(p, &["train", "--arch", "nope", "--train", "x", "--out", "y"]).status.code(), Some(1));
    assert_eq!(mdi(p, &["kappa", "missing_a", "missing_b"]).status.code(), Some(2));
    assert_eq!(mdi(p, &["--set", "lr", "eval", "--predictions", "x"]).status.code(), Some(1));
    assert_eq!(mdi(p, &["eval", "--input", "x"]).status.code(), Some(1));
    assert_eq!(mdi(p, &["--help"]).status.code(), Some(0));

    fs::write(p.join("bad.jsonl"), "{\"id\": \"\"}\n").unwrap();
    assert_eq!(mdi(p, &["preprocess", "--input", "bad.jsonl", "--output", "o.jsonl"]).status.code(), Some(2));

    synth(p);
    let mut args = vec!["--set", "lr=1e300", "--set", "epochs=1", "--set", "embed_dim=8", "--set", "units=8"];
    args.extend(["train", "--arch", "single", "--train", "syn/train.jsonl", "--out", "nan.ckpt"]);
    let out = mdi(p, &args);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn disjoint_split_then_train_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p);
    ok(
        p,
        &["split", "disjoint", "--input", "syn/corpus.jsonl", "--setting", "wide", "--out", "split.json", "--write-dir", "sp"],
    );
    let split = json(p.join("split.json"));
    assert_eq!(split["disjoint"], true);
    let users = |name: &str| -> Vec<String> {
        split["splits"][name]["user_ids"]
            .as_array()
            .unwrap()
            .iter()
            .map(|u| u.as_str().unwrap().to_string())
            .collect()
    };
    let (train_users, test_users) = (users("train"), users("test"));
    assert_eq!(test_users.len(), 12);
    assert!(test_users.iter().all(|u| !train_users.contains(u)));

    let mut args = TINY_MODEL.to_vec();
    args.extend(["train", "--arch", "hamtl-city", "--train", "sp/train.jsonl", "--out", "m.ckpt"]);
    ok(p, &args);
    ok(p, &["eval", "--ckpt", "m.ckpt", "--input", "sp/test.jsonl", "--out", "r.json"]);
    let report = json(p.join("r.json"));
    assert!(report["accuracy"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["n"], split["splits"]["test"]["record_ids"].as_array().unwrap().len());
}

#[test]
fn reruns_are_byte_identical_and_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p);
    let before = fs::read(p.join("syn/train.jsonl")).unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let ckpt = format!("{run}.ckpt");
        let report = format!("{run}.json");
        let mut args = TINY_MODEL.to_vec();
        args.extend(["--seed", "7", "train", "--arch", "mtl-spec", "--aux", "diagloss", "--train", "syn/train.jsonl"]);
        args.extend(["--dev", "syn/test.jsonl", "--out", &ckpt]);
        ok(p, &args);
        ok(p, &["--seed", "7", "eval", "--ckpt", &ckpt, "--input", "syn/test.jsonl", "--geo", "syn/gazetteer.tsv", "--out", &report]);
        outputs.push((fs::read(p.join(&ckpt)).unwrap(), fs::read(p.join(&report)).unwrap()));
    }
    assert_eq!(outputs[0].0, outputs[1].0);
    assert_eq!(outputs[0].1, outputs[1].1);
    assert_eq!(before, fs::read(p.join("syn/train.jsonl")).unwrap());

    let manifest = json(p.join("a.ckpt.manifest.json"));
    assert_eq!(manifest["config"]["seed"], "7");
    assert_eq!(manifest["config"]["epochs"], "2");
    assert_eq!(manifest["config"]["patience"], "5");
}

#[test]
fn config_file_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("run.cfg"), "# small corpus\nsynth.users_per_city = 3\nsynth.tweets_per_user = 2\nseed = 4\n").unwrap();
    let out = ok(
        p,
        &["--config", "run.cfg", "--set", "synth.tweets_per_user=5", "--json", "synth", "--out", "syn"],
    );
    let summary: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["records"], 12 * 3 * 5);
    let manifest = json(p.join("syn/corpus.jsonl.manifest.json"));
    assert_eq!(manifest["config"]["seed"], "4");
    assert_eq!(manifest["config"]["synth.tweets_per_user"], "5");
    assert_eq!(manifest["config"]["synth.markers_per_city"], "5");
}

#[test]
fn kappa_and_labelling() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("a.labels"), "x\ny\nx\ny\n").unwrap();
    fs::write(p.join("b.labels"), "x\ny\ny\ny\n").unwrap();
    let k: f64 = ok(p, &["kappa", "a.labels", "b.labels"]).trim().parse().unwrap();
    // po = 3/4, pe = (2·1 + 2·3)/16 = 1/2.
    assert!((k - 0.5).abs() < 1e-12);

    synth(p);
    ok(p, &["label", "diagloss", "--input", "syn/corpus.jsonl", "--output", "dg.jsonl"]);
    let text = fs::read_to_string(p.join("dg.jsonl")).unwrap();
    assert!(!text.is_empty());
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(matches!(v["diagloss"].as_str(), Some("MSA" | "DA")));
    }
}

#[test]
fn attention_dump_rows_are_distributions() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p);
    let mut args = TINY_MODEL.to_vec();
    args.extend(["train", "--arch", "mtl-common", "--train", "syn/train.jsonl", "--out", "m.ckpt"]);
    ok(p, &args);
    ok(p, &["attn-dump", "--ckpt", "m.ckpt", "--input", "syn/test.jsonl", "--out", "attn.jsonl"]);
    for line in fs::read_to_string(p.join("attn.jsonl")).unwrap().lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let n = v["tokens"].as_array().unwrap().len();
        for (_, w) in v["attention"].as_object().unwrap() {
            let w: Vec<f64> = w.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
            assert_eq!(w.len(), n);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
