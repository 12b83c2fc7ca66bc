use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

use phantomnet::data::{synth_blobs, write_idx};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phantomnet"))
        .args(args)
        .arg("--quiet")
        .current_dir(dir)
        .env("PHANTOMNET_DATA", dir)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn ok(out: Output) {
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn write(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.display().to_string()
}

fn base_config() -> Value {
    json!({
        "hidden": [{ "units": 16, "activation": { "kind": "relu" } }],
        "training": { "epochs": 5, "batch_size": 16, "schedule": { "kind": "constant", "rate": 0.05 }, "momentum": 0.9 },
        "gan": { "noise_dim": 4, "generator_hidden": [16], "discriminator_hidden": [[8, 2]] },
        "gan_training": { "batch_size": 16, "learning_rate": 0.001, "beta1": 0.5, "beta2": 0.999, "seed": 0 },
        "gan_epochs": 2,
        "seed": 1
    })
}

fn increment_settings() -> Value {
    json!({
        "training": { "epochs": 3, "batch_size": 16, "schedule": { "kind": "constant", "rate": 0.05 }, "momentum": 0.9 },
        "temperature": 2.0
    })
}

fn blobs(keep: Option<&[usize]>, seed: u64) -> Value {
    json!({ "source": "blobs", "num_classes": 6, "dim": 9, "per_class": 20, "separation": 6.0, "seed": seed, "keep": keep })
}

fn idx(name: &str) -> Value {
    json!({ "source": "idx", "images": format!("{name}-images.gz"), "labels": format!("{name}-labels.gz") })
}

/// Writes the base (labels 0-3) and increment (labels 4-5) IDX files.
fn write_sites(dir: &Path) {
    let all = synth_blobs(6, 9, 30, 6.0, 11).unwrap();
    let base = all.filter(|l| l < 4).with_label_range(0..4).unwrap();
    let inc = all.filter(|l| l >= 4);
    write_idx(&base, dir.join("base-images.gz"), dir.join("base-labels.gz")).unwrap();
    write_idx(&inc, dir.join("inc-images.gz"), dir.join("inc-labels.gz")).unwrap();
    write_idx(&all, dir.join("test-images.gz"), dir.join("test-labels.gz")).unwrap();
    let old = all.filter(|l| l < 4).with_label_range(0..4).unwrap();
    write_idx(&old, dir.join("oldtest-images.gz"), dir.join("oldtest-labels.gz")).unwrap();
}

fn base_site(dir: &Path) -> PathBuf {
    write_sites(dir);
    let cfg = write(dir, "base.json", &json!({ "train": idx("base"), "test": [idx("test")], "base": base_config() }));
    ok(run(dir, &["base-train", "--config", &cfg, "--out", "base"]));
    let b = write(dir, "broadcast.json", &json!({ "classifier": "base/classifier.pnc", "gan": "base/gan/gan-epoch-0002.pnc" }));
    ok(run(dir, &["broadcast", "--config", &b, "--out", "site"]));
    dir.join("site/bundle.pnc")
}

fn increment_config(dir: &Path, data: Value) -> String {
    write(
        dir,
        "inc.json",
        &json!({
            "bundle": dir.join("site/bundle.pnc"),
            "data": data,
            "test": [idx("test")],
            "increment": increment_settings(),
            "seed": 4
        }),
    )
}

#[test]
fn increment_site_runs_with_base_data_deleted() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let bundle = base_site(dir);
    assert!(bundle.exists());
    fs::remove_file(dir.join("base-images.gz")).unwrap();
    fs::remove_file(dir.join("base-labels.gz")).unwrap();
    fs::remove_dir_all(dir.join("base")).unwrap();

    let cfg = increment_config(dir, idx("inc"));
    ok(run(dir, &["increment", "--config", &cfg, "--out", "inc"]));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.join("inc/report.json")).unwrap()).unwrap();
    assert_eq!(report["old_classes"], 4);
    assert_eq!(report["total_classes"], 6);
    assert_eq!(report["membrane_violation"], false);
    assert!(dir.join("inc/accuracy.csv").exists());
    assert!(dir.join("inc/confusion.txt").exists());
}

#[test]
fn overlapping_increment_data_is_refused_with_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    base_site(dir);
    let cfg = increment_config(dir, idx("base"));
    let out = run(dir, &["increment", "--config", &cfg, "--out", "inc"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.join("inc/classifier.pnc").exists());
    let mut relaxed: Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    relaxed["test"] = json!([idx("oldtest")]);
    let cfg = write(dir, "relaxed.json", &relaxed);
    ok(run(dir, &["increment", "--config", &cfg, "--out", "inc", "--allow-relaxation", "p=1"]));
}

#[test]
fn exemplar_baseline_needs_matching_relaxation() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    base_site(dir);
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(increment_config(dir, idx("inc"))).unwrap()).unwrap();
    cfg["exemplars"] = json!({ "data": idx("base"), "per_class": 5 });
    let cfg = write(dir, "ex.json", &cfg);
    assert_eq!(code(&run(dir, &["baseline-exemplar", "--config", &cfg, "--out", "ex"])), 3);
    assert_eq!(
        code(&run(dir, &["baseline-exemplar", "--config", &cfg, "--out", "ex", "--allow-relaxation", "p=4"])),
        3
    );
    ok(run(dir, &["baseline-exemplar", "--config", &cfg, "--out", "ex", "--allow-relaxation", "p=5"]));
    let csv = fs::read_to_string(dir.join("ex/accuracy.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("exemplar,5,"));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.json"), "{ not json").unwrap();
    assert_eq!(code(&run(dir, &["base-train", "--config", "bad.json"])), 2);
    let cfg = write(dir, "extra.json", &json!({ "train": blobs(Some(&[0, 1]), 1), "base": base_config(), "bogus": 1 }));
    assert_eq!(code(&run(dir, &["base-train", "--config", &cfg])), 2);
    let mut sweep = sweep_config(&[1]);
    sweep["seeds"] = json!([]);
    let cfg = write(dir, "sweep.json", &sweep);
    assert_eq!(code(&run(dir, &["sweep", "--config", &cfg])), 2);
    let mut base = base_config();
    base["training"]["batch_size"] = json!(0);
    let cfg = write(dir, "zero.json", &json!({ "train": blobs(Some(&[0, 1]), 1), "base": base }));
    assert_eq!(code(&run(dir, &["base-train", "--config", &cfg])), 2);
}

#[test]
fn missing_files_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&run(dir, &["base-train", "--config", "absent.json"])), 1);
    let cfg = write(dir, "b.json", &json!({ "classifier": "none.pnc", "gan": "none.pnc" }));
    assert_eq!(code(&run(dir, &["broadcast", "--config", &cfg])), 1);
}

fn sweep_config(seeds: &[u64]) -> Value {
    json!({
        "base_data": blobs(Some(&[0, 1, 2, 3]), 2),
        "increment_data": blobs(Some(&[4, 5]), 3),
        "test": [blobs(None, 9)],
        "base": base_config(),
        "increment": increment_settings(),
        "methods": ["naive", "noise", "phantom"],
        "temperatures": [1.0, 2.0],
        "gan_epochs": [0, 2],
        "seeds": seeds
    })
}

#[test]
fn seeded_sweeps_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write(dir, "sweep.json", &sweep_config(&[1, 2]));
    ok(run(dir, &["sweep", "--config", &cfg, "--out", "a"]));
    ok(run(dir, &["sweep", "--config", &cfg, "--out", "b"]));
    for f in ["accuracy.csv", "summary.csv", "report.json"] {
        assert_eq!(fs::read(dir.join("a").join(f)).unwrap(), fs::read(dir.join("b").join(f)).unwrap(), "{f}");
    }
    let rows = fs::read_to_string(dir.join("a/accuracy.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * (1 + 1 + 2 * 2));
    ok(run(dir, &["sweep", "--config", &cfg, "--out", "c", "--seed", "7"]));
    assert_ne!(fs::read(dir.join("a/accuracy.csv")).unwrap(), fs::read(dir.join("c/accuracy.csv")).unwrap());
}

fn summary(dir: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(dir.join("summary.csv"))
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn report_merges_runs_with_median_and_range() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut runs = Vec::new();
    for seed in [1u64, 2, 3] {
        let mut cfg = sweep_config(&[seed]);
        cfg["methods"] = json!(["naive"]);
        let path = write(dir, &format!("s{seed}.json"), &cfg);
        let out = format!("run{seed}");
        ok(run(dir, &["sweep", "--config", &path, "--out", &out]));
        runs.push(out);
    }
    let mut args = vec!["report", "--out", "merged"];
    args.extend(runs.iter().map(String::as_str));
    ok(run(dir, &args));

    let table = summary(&dir.join("merged"));
    assert_eq!(table[0][5..7], ["combined_median", "combined_range"]);
    assert_eq!(table.len(), 2);
    assert_eq!(table[1][4], "3");
    let combined: Vec<f64> = runs
        .iter()
        .map(|r| {
            let csv = fs::read_to_string(dir.join(r).join("accuracy.csv")).unwrap();
            let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
            let col = header.iter().position(|h| *h == "combined").unwrap();
            csv.lines().nth(1).unwrap().split(',').nth(col).unwrap().parse().unwrap()
        })
        .collect();
    let mut sorted = combined.clone();
    sorted.sort_by(f64::total_cmp);
    let median: f64 = table[1][5].parse().unwrap();
    let range: f64 = table[1][6].parse().unwrap();
    assert!((median - sorted[1]).abs() < 1e-6);
    assert!((range - (sorted[2] - sorted[0])).abs() < 1e-6);
    assert_eq!(fs::read_to_string(dir.join("merged/merged.csv")).unwrap().lines().count(), 4);

    ok(run(dir, &["report", "--out", "single", "run1"]));
    let single = summary(&dir.join("single"));
    assert_eq!(single.len(), 2);
    assert_eq!(single[1][4], "1");
    assert_eq!(single[1][6].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn report_refuses_mixed_schedules() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut a = sweep_config(&[1]);
    a["methods"] = json!(["naive"]);
    let mut b = a.clone();
    b["base_data"] = blobs(Some(&[0, 1, 2]), 2);
    b["increment_data"] = blobs(Some(&[3, 4, 5]), 3);
    let (a, b) = (write(dir, "a.json", &a), write(dir, "b.json", &b));
    ok(run(dir, &["sweep", "--config", &a, "--out", "a"]));
    ok(run(dir, &["sweep", "--config", &b, "--out", "b"]));
    assert_eq!(code(&run(dir, &["report", "--out", "m", "a", "b"])), 2);
    assert!(!dir.join("m/summary.csv").exists());
}

#[test]
fn evaluate_and_gradient_check_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    base_site(dir);
    let cfg = write(dir, "eval.json", &json!({ "model": "site/bundle.pnc", "test": [idx("test")] }));
    assert_eq!(code(&run(dir, &["evaluate", "--config", &cfg, "--out", "eval"])), 2);
    for model in ["base/classifier.pnc", "site/bundle.pnc"] {
        let cfg = write(dir, "eval.json", &json!({ "model": model, "test": [idx("oldtest")] }));
        ok(run(dir, &["evaluate", "--config", &cfg, "--out", "eval"]));
        let r: Value = serde_json::from_str(&fs::read_to_string(dir.join("eval/report.json")).unwrap()).unwrap();
        assert!(r["evaluation"]["accuracy"].as_f64().unwrap() > 0.5);
    }
    let cfg = write(dir, "gc.json", &json!({ "trials": 6, "seed": 3 }));
    ok(run(dir, &["gradient-check", "--config", &cfg, "--out", "gc"]));
    let r: Value = serde_json::from_str(&fs::read_to_string(dir.join("gc/report.json")).unwrap()).unwrap();
    assert!(r["result"]["max_relative_error"].as_f64().unwrap() < 1e-4);
}
