use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mapfilter::{write_tensor, FeatureTensor};

const BIN: &str = env!("CARGO_BIN_EXE_mapfilter");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn mapfilter")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Small synthetic dataset: 60 places, 16 channels, 20 calibration images.
fn synth(dir: &Path, name: &str) {
    ok(
        dir,
        &[
            "synth", "--places", "60", "--calib", "20", "--queries", "30", "--channels", "16",
            "--signal", "5", "--seed", "3", "--out", name,
        ],
    );
}

fn calibrate(dir: &Path, data: &str, out: &str, extra: &[&str]) -> Output {
    let r = format!("{data}/reference/manifest.json");
    let c = format!("{data}/calibration/manifest.json");
    let k = format!("{data}/calibration/correspondences.csv");
    let mut args = vec![
        "calibrate", "--reference", &r, "--calibration", &c, "--correspondences", &k,
        "--seed", "1", "--out", out,
    ];
    if !extra.contains(&"--num-calib") {
        args.extend(["--num-calib", "20"]);
    }
    args.extend_from_slice(extra);
    run(dir, &args)
}

fn match_cmd(dir: &Path, query: &str, refm: &str, filter: Option<&str>, out: &str) -> Output {
    let mut args = vec!["match", "--query", query, "--reference", refm, "--out", out];
    match filter {
        Some(f) => args.extend(["--filter", f]),
        None => args.push("--no-filter"),
    }
    run(dir, &args)
}

/// Relative paths of every file under `root`, sorted.
fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pool_prints_ascending_example() {
    let dir = tempfile::tempdir().unwrap();
    let t = FeatureTensor::new(4, 4, 1, (1..=16).map(|v| v as f32).collect()).unwrap();
    write_tensor(&t, dir.path().join("asc.fmap")).unwrap();
    let out = ok(dir.path(), &["pool", "asc.fmap"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "[16, 6, 8, 14, 16]\n");
    let out = ok(dir.path(), &["pool", "asc.fmap", "--kept", "0"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "[16, 6, 8, 14, 16]\n");

    let bad = run(dir.path(), &["pool", "asc.fmap", "--kept", "1"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["match", "--query", "q"]).status.code(), Some(1));
    synth(dir.path(), "d");
    let out = calibrate(dir.path(), "d", "f.json", &["--threshold", "-1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "a");
    synth(dir.path(), "b");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let fa = files(&a);
    assert_eq!(fa, files(&b));
    assert!(fa.len() > 100);
    for f in fa {
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{f:?}");
    }
}

#[test]
fn single_calibration_image_sets_kept_count() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d");
    let out = calibrate(dir.path(), "d", "f.json", &["--num-calib", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("f.json")).unwrap()).unwrap();
    let removed = doc["per_image_removed"].as_array().unwrap();
    assert_eq!(removed.len(), 1);
    let k = 16 - removed[0].as_array().unwrap().len();
    assert_eq!(doc["kept_count"].as_u64().unwrap() as usize, k);
    assert_eq!(doc["kept_set"].as_array().unwrap().len(), k);
    assert_eq!(doc["config"]["num_calibration_images"], 1);
}

#[test]
fn missing_tensor_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d");
    fs::remove_file(dir.path().join("d/reference/ref000007.fmap")).unwrap();
    let out = calibrate(dir.path(), "d", "f.json", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ref000007.fmap"));
}

#[test]
fn no_filter_on_identical_sets_matches_itself() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d");
    let m = "d/reference/manifest.json";
    let out = match_cmd(dir.path(), m, m, None, "self.csv");
    assert!(out.status.success());
    let table = mapfilter::matcher::read_match_table(dir.path().join("self.csv")).unwrap();
    assert_eq!(table.len(), 60);
    for (i, row) in table.iter().enumerate() {
        assert_eq!(row.best_index, i);
    }
}

#[test]
fn keep_all_filter_equals_no_filter() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d");
    assert!(calibrate(dir.path(), "d", "f.json", &[]).status.success());
    let mut doc: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("f.json")).unwrap()).unwrap();
    doc["kept_set"] = (0..16).collect::<Vec<u32>>().into();
    doc["kept_count"] = 16.into();
    fs::write(dir.path().join("all.json"), doc.to_string()).unwrap();

    let (q, r) = ("d/query/manifest.json", "d/reference/manifest.json");
    assert!(match_cmd(dir.path(), q, r, Some("all.json"), "a.csv").status.success());
    assert!(match_cmd(dir.path(), q, r, None, "b.csv").status.success());
    assert_eq!(
        fs::read(dir.path().join("a.csv")).unwrap(),
        fs::read(dir.path().join("b.csv")).unwrap()
    );
}

#[test]
fn filtered_match_reports_timing() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d");
    assert!(calibrate(dir.path(), "d", "f.json", &[]).status.success());
    let (q, r) = ("d/query/manifest.json", "d/reference/manifest.json");
    assert!(match_cmd(dir.path(), q, r, Some("f.json"), "m.csv").status.success());
    let timing: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("m.csv.timing.json")).unwrap()).unwrap();
    assert_eq!(timing["per_query_ms"].as_array().unwrap().len(), 30);
    let report = &timing["report"];
    assert!(report["kept"].as_u64().unwrap() < 16);
    assert!(report["mean_filtered_ms"].as_f64().unwrap() > 0.0);
    assert!(report["time_ratio"].as_f64().is_some());
}

#[test]
fn filter_channel_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d");
    assert!(calibrate(dir.path(), "d", "f.json", &[]).status.success());
    let mut doc: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("f.json")).unwrap()).unwrap();
    doc["channels"] = 32.into();
    doc["removal_counts"] = vec![0u32; 32].into();
    fs::write(dir.path().join("bad.json"), doc.to_string()).unwrap();
    let out = match_cmd(
        dir.path(),
        "d/query/manifest.json",
        "d/reference/manifest.json",
        Some("bad.json"),
        "m.csv",
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("32 channels"));
}

fn eval(dir: &Path, table: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "eval", "--table", table, "--query", "d/query/manifest.json", "--reference",
        "d/reference/manifest.json", "--correspondences", "d/query/correspondences.csv",
        "--tolerance", "0", "--out", "ev",
    ];
    args.extend_from_slice(extra);
    run(dir, &args)
}

#[test]
fn eval_perfect_run_and_baseline_ratio() {
    let dir = tempfile::tempdir().unwrap();
    // no appearance change: every query matches its place
    ok(
        dir.path(),
        &[
            "synth", "--places", "60", "--calib", "20", "--queries", "30", "--channels", "16",
            "--signal", "5", "--noise-scale", "0", "--shift", "0", "--jitter", "0", "--out", "d",
        ],
    );
    let (q, r) = ("d/query/manifest.json", "d/reference/manifest.json");
    assert!(match_cmd(dir.path(), q, r, None, "u.csv").status.success());
    let out = eval(dir.path(), "u.csv", &["--baseline", "u.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("max F1 1.0000"), "{stdout}");
    assert!(stdout.contains("max F1 ratio 1.0000"), "{stdout}");
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("ev/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["max_f1"], 1.0);
    assert_eq!(summary["config"]["tolerance"], 0.0);
    assert!(dir.path().join("ev/baseline_summary.json").exists());
    let pr = fs::read_to_string(dir.path().join("ev/pr.csv")).unwrap();
    assert!(pr.starts_with("threshold,precision,recall,f1\n"));
}

#[test]
fn eval_rejects_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d");
    fs::write(dir.path().join("empty.csv"), "query_id,best_index,quality,best_distance\n").unwrap();
    let out = eval(dir.path(), "empty.csv", &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d");
    fs::write(
        dir.path().join("cfg.toml"),
        "[calibrate]\nthreshold = 0.5\nseed = 9\nnum_calib = 20\n",
    )
    .unwrap();
    let out = calibrate(dir.path(), "d", "f.json", &["--config", "cfg.toml"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("f.json")).unwrap()).unwrap();
    // --seed 1 on the command line beats seed = 9 in the file
    assert_eq!(doc["config"]["rng_seed"], 1);
    assert_eq!(doc["config"]["gradient_cutoff"], 0.5);

    fs::write(dir.path().join("bad.toml"), "[calibrate]\nbogus = 1\n").unwrap();
    let out = calibrate(dir.path(), "d", "f.json", &["--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn overlapping_query_traverse_warns() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d");
    let out = calibrate(dir.path(), "d", "f.json", &["--query", "d/calibration/manifest.json"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}
