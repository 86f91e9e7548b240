use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn calli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calli"))
        .args(args)
        .env_remove("CALLI_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn calli")
}

fn ok(args: &[&str]) -> String {
    let out = calli(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir` except run.json records, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run.json" {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

const TINY: &str = r#"
[order]
epochs = 2
[order.model]
dim = 16
heads = 2
layers = 1
ff_dim = 32

[align]
steps = 6
eval_every = 3
batch = 8
[align.table]
chars = 12
extra_tokens = 8
[align.model]
dim = 16
heads = 2
blocks = 1
ff_dim = 32
tokens = 8
feature_dim = 8

[noise]
sentences = 10
[noise_table]
chars = 50
dim = 16
"#;

fn tiny_config(tmp: &TempDir) -> PathBuf {
    let p = tmp.path().join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p
}

fn column_page(id: &str, columns: usize, per_column: usize) -> Value {
    let mut boxes = Vec::new();
    let mut order = Vec::new();
    for c in 0..columns {
        for r in 0..per_column {
            let x = 2000.0 - 40.0 * c as f64;
            let y = 10.0 + 40.0 * r as f64;
            order.push(boxes.len());
            boxes.push(json!({
                "box": { "x1": x, "y1": y, "x2": x + 30.0, "y2": y + 30.0 },
                "label": char::from_u32(0x4e00 + boxes.len() as u32).unwrap().to_string(),
                "column_index": c,
                "row_index": r,
            }));
        }
    }
    // Scramble storage order so the prediction has work to do.
    boxes.reverse();
    let n = boxes.len();
    let order: Vec<usize> = order.iter().map(|i| n - 1 - i).collect();
    json!({ "id": id, "width": 2100, "height": 2100, "boxes": boxes, "reading_order": order,
            "layout": "hanging_scroll", "style": "regular" })
}

#[test]
fn help_for_every_subcommand() {
    for sub in [
        vec!["--help"],
        vec!["gen", "--help"],
        vec!["train-order", "--help"],
        vec!["train-align", "--help"],
        vec!["order", "--help"],
        vec!["eval", "--help"],
        vec!["eval-order", "--help"],
        vec!["decode-align", "--help"],
        vec!["pilot", "--help"],
        vec!["pilot", "noise", "--help"],
        vec!["pilot", "slicing", "--help"],
        vec!["stats", "--help"],
    ] {
        let text = ok(&sub);
        assert!(text.contains("Usage"), "{sub:?}");
    }
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = calli(&["frobnicate"]);
    assert_eq!(code(&out), 2);

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[order]\nepochs = \"many\"\n").unwrap();
    let out = calli(&["-c", s(&bad), "stats", "--data", s(tmp.path())]);
    assert_eq!(code(&out), 2);

    let out = calli(&["order", s(&tmp.path().join("missing.json"))]);
    assert_eq!(code(&out), 3);
    let err: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "input");
    assert_eq!(err["code"], 3);

    let out = Command::new(env!("CARGO_BIN_EXE_calli"))
        .args(["pilot", "slicing", "--out", s(tmp.path())])
        .env("CALLI_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn capacity_error_has_its_own_exit_code() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(&tmp);
    let data = tmp.path().join("data");
    ok(&["-c", s(&cfg), "gen", "--out", s(&data), "--count", "10"]);
    let model = tmp.path().join("model");
    ok(&[
        "-c",
        s(&cfg),
        "train-order",
        "--data",
        s(&data),
        "--out",
        s(&model),
        "--epochs",
        "1",
    ]);
    let page = tmp.path().join("wide.json");
    fs::write(&page, column_page("wide", 51, 2).to_string()).unwrap();
    let out = calli(&["order", s(&page), "--model", s(&model)]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn single_column_reads_top_to_bottom() {
    let tmp = TempDir::new().unwrap();
    let page = tmp.path().join("col.json");
    fs::write(&page, column_page("col", 1, 6).to_string()).unwrap();
    let out: Value = serde_json::from_str(&ok(&["order", s(&page), "--json"])).unwrap();
    let ys: Vec<f64> = out["boxes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| b["box"]["y1"].as_f64().unwrap())
        .collect();
    assert_eq!(ys.len(), 6);
    assert!(ys.windows(2).all(|w| w[0] < w[1]), "{ys:?}");
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen", "--out", s(&data), "--count", "12"]);
    let mut lines = String::new();
    for e in fs::read_dir(data.join("pages")).unwrap() {
        let page: Value = serde_json::from_slice(&fs::read(e.unwrap().path()).unwrap()).unwrap();
        let text: String = page["reading_order"]
            .as_array()
            .unwrap()
            .iter()
            .map(|i| {
                page["boxes"][i.as_u64().unwrap() as usize]["label"]
                    .as_str()
                    .unwrap()
                    .to_string()
            })
            .collect();
        lines += &json!({ "id": page["id"], "prediction": text }).to_string();
        lines.push('\n');
    }
    let preds = tmp.path().join("preds.jsonl");
    fs::write(&preds, lines).unwrap();
    let out = tmp.path().join("eval");
    ok(&["eval", "--predictions", s(&preds), "--data", s(&data), "--out", s(&out)]);
    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let summary = report.to_string();
    for sample in report["per_sample"].as_array().unwrap() {
        assert_eq!(sample["prf"]["f1"], 1.0, "{summary}");
        assert_eq!(sample["ned"], 0.0, "{summary}");
    }
    assert_eq!(report["per_sample"].as_array().unwrap().len(), 12);
}

#[test]
fn noise_pilot_writes_full_grid() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(&tmp);
    let out = tmp.path().join("noise");
    ok(&["-c", s(&cfg), "pilot", "noise", "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("noise.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 10);
    let cells: usize = rows[1..].iter().map(|r| r.split(',').count() - 1).sum();
    assert_eq!(cells, 81);
    assert!(rows.iter().all(|r| r.split(',').count() == 10));
}

#[test]
fn slicing_pilot_report() {
    let tmp = TempDir::new().unwrap();
    ok(&["pilot", "slicing", "--out", s(tmp.path()), "--chars", "20"]);
    let report: Value = serde_json::from_slice(&fs::read(tmp.path().join("slicing.json")).unwrap()).unwrap();
    assert_eq!(report["policies"].as_array().unwrap().len(), 4);
}

#[test]
fn rerun_from_record_reproduces_artifacts() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(&tmp);
    let t = |name: &str| tmp.path().join(name);

    ok(&[
        "-c",
        s(&cfg),
        "--seed",
        "7",
        "gen",
        "--out",
        s(&t("d1")),
        "--count",
        "16",
    ]);
    ok(&["-c", s(&t("d1").join("run.json")), "gen", "--out", s(&t("d2"))]);
    assert_eq!(snapshot(&t("d1")), snapshot(&t("d2")));
    let other = t("d3");
    ok(&["-c", s(&cfg), "--seed", "8", "gen", "--out", s(&other), "--count", "16"]);
    assert_ne!(snapshot(&t("d1")), snapshot(&other));

    ok(&[
        "-c",
        s(&cfg),
        "train-order",
        "--data",
        s(&t("d1")),
        "--out",
        s(&t("o1")),
    ]);
    ok(&[
        "-c",
        s(&t("o1").join("run.json")),
        "train-order",
        "--data",
        s(&t("d1")),
        "--out",
        s(&t("o2")),
    ]);
    assert_eq!(snapshot(&t("o1")), snapshot(&t("o2")));

    ok(&["-c", s(&cfg), "train-align", "--out", s(&t("a1"))]);
    ok(&["-c", s(&t("a1").join("run.json")), "train-align", "--out", s(&t("a2"))]);
    assert_eq!(snapshot(&t("a1")), snapshot(&t("a2")));

    let r1: Value = serde_json::from_slice(&fs::read(t("a1").join("run.json")).unwrap()).unwrap();
    let r2: Value = serde_json::from_slice(&fs::read(t("a2").join("run.json")).unwrap()).unwrap();
    assert_eq!(r1["config"], r2["config"]);
}

#[test]
fn decode_align_and_eval_order_run_on_fresh_checkpoints() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(&tmp);
    let t = |name: &str| tmp.path().join(name);
    ok(&["-c", s(&cfg), "train-align", "--out", s(&t("align"))]);
    let text = ok(&[
        "-c",
        s(&cfg),
        "decode-align",
        "--model",
        s(&t("align")),
        "--chars",
        "0,3",
        "--out",
        s(&t("dec")),
    ]);
    assert!(text.contains("accuracy"), "{text}");
    let report: Value = serde_json::from_slice(&fs::read(t("dec").join("report.json")).unwrap()).unwrap();
    assert_eq!(report["characters"].as_array().unwrap().len(), 2);

    ok(&["-c", s(&cfg), "gen", "--out", s(&t("data")), "--count", "10"]);
    ok(&[
        "-c",
        s(&cfg),
        "train-order",
        "--data",
        s(&t("data")),
        "--out",
        s(&t("om")),
    ]);
    let table = ok(&["eval-order", "--data", s(&t("data")), "--model", s(&t("om"))]);
    assert!(table.contains("baseline") && table.contains("model"), "{table}");
    let stats = ok(&["stats", "--data", s(&t("data"))]);
    assert!(stats.contains("pages 10"), "{stats}");
}
