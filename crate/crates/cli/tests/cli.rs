use std::path::Path;

use mvpconv::train::parse_history_csv;
use mvpconv_cli::ablation::{self as abl, AblationReport};
use mvpconv_cli::{data, run_command};

fn run(args: &[&str]) -> i32 {
    run_command(std::iter::once("mvpconv").chain(args.iter().copied()))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let cfg = r#"{
        "model": {"blocks": [[4, 4], [8, 4]], "global_dim": 8, "classifier": [8]},
        "train": {"epochs": 2, "batch_size": 4, "dataset": {"n_points": 64, "n_clouds": 10}}
    }"#;
    let p = dir.join("cfg.json");
    std::fs::write(&p, cfg).unwrap();
    p
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["frobnicate"]), 2);
    assert_eq!(run(&["train", "--bogus"]), 2);
    assert_eq!(run(&["train", "--config", "/definitely/not/here.json"]), 2);
}

#[test]
fn gen_data_writes_clouds_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let code = run(&["gen-data", "--kind", "quad", "--points", "128", "--clouds", "6", "--seed", "7", "--out", path(&out)]);
    assert_eq!(code, 0);
    let manifest = data::read_manifest(&out).unwrap();
    assert_eq!(manifest.files.len(), 6);
    let clouds = data::read_dataset(&out).unwrap();
    assert!(clouds.iter().all(|c| c.points() == 128 && c.labels().is_some()));
}

#[test]
fn train_then_eval_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    assert_eq!(run(&["train", "--config", path(&cfg), "--out", path(&out)]), 0);
    let history = parse_history_csv(&std::fs::read_to_string(out.join("history.csv")).unwrap()).unwrap();
    assert_eq!(history.len(), 2);
    let trained: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();

    let again = dir.path().join("eval");
    let ckpt = out.join("final.mvpc");
    assert_eq!(run(&["eval", "--config", path(&cfg), "--checkpoint", path(&ckpt), "--out", path(&again)]), 0);
    let evaluated: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(again.join("eval.json")).unwrap()).unwrap();
    assert_eq!(trained["miou"], evaluated["miou"]);
    assert_eq!(trained["accuracy"], evaluated["accuracy"]);
}

#[test]
fn reruns_match_except_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let mut reports = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("a{i}"));
        assert_eq!(run(&["ablate", "table6", "--config", path(&cfg), "--epochs", "1", "--trials", "3", "--out", path(&out)]), 0);
        let mut r: AblationReport = serde_json::from_str(&std::fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
        for row in &mut r.rows {
            row.median_latency_ms = None;
            row.train_seconds = None;
        }
        let csv = abl::parse_csv(&std::fs::read_to_string(out.join("ablation.csv")).unwrap()).unwrap();
        assert_eq!(csv.len(), r.rows.len());
        reports.push(r);
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0].rows.len(), 2);
}

#[test]
fn bench_rejects_too_few_trials() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("b");
    assert_eq!(run(&["bench", "--config", path(&cfg), "--trials", "1", "--out", path(&out)]), 1);
    assert_eq!(run(&["bench", "--config", path(&cfg), "--points", "64", "--resolutions", "2,4", "--trials", "3", "--out", path(&out)]), 0);
    let rows = mvpconv_cli::bench::parse_csv(&std::fs::read_to_string(out.join("bench.csv")).unwrap()).unwrap();
    assert_eq!(rows.iter().map(|r| r.resolution).collect::<Vec<_>>(), [2, 4]);
}
