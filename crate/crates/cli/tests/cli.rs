use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fmo_core::image::{save_png, BitDepth};
use fmo_core::synth::read_dataset;

fn fmo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fmo"))
        .args(args)
        .env("FMO_LOG", "warn")
        .output()
        .expect("spawn fmo")
}

fn ok(args: &[&str]) -> String {
    let out = fmo(args);
    assert!(
        out.status.success(),
        "fmo {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"{"version": 1, "canvas": [32, 32], "n_gt": 8, "count": 2, "solver": {"max_iters": 5, "n_subframes": 4}}"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_layout_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["--config", &cfg, "--seed", "5", "synth", "--out", s(&a)]);
    ok(&["--config", &cfg, "--seed", "5", "synth", "--out", s(&b)]);
    assert!(a.join("manifest.json").is_file());
    let (samples, _) = read_dataset(&a).unwrap();
    assert_eq!(samples.len(), 2);
    for sample in &samples {
        let d = a.join(&sample.id);
        let mut files = vec!["I.png".to_string(), "B.png".into(), "gt/traj.csv".into()];
        for i in 0..8 {
            files.push(format!("gt/F_{i:02}.png"));
            files.push(format!("gt/M_{i:02}.png"));
        }
        for f in &files {
            let bytes = fs::read(d.join(f)).unwrap_or_else(|_| panic!("missing {f}"));
            assert_eq!(bytes, fs::read(b.join(&sample.id).join(f)).unwrap(), "{f} differs");
        }
    }
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
}

#[test]
fn solve_layout_rerun_and_gt_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let data = dir.path().join("data");
    ok(&["--config", &cfg, "synth", "--out", s(&data)]);
    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    ok(&["--config", &cfg, "solve", "--data", s(&data), "--out", s(&e1)]);
    ok(&["--config", &cfg, "--jobs", "2", "solve", "--data", s(&data), "--out", s(&e2)]);
    let (samples, _) = read_dataset(&data).unwrap();
    for sample in &samples {
        let d = e1.join(&sample.id);
        for i in 0..4 {
            assert!(d.join(format!("est/F_{i:02}.png")).is_file());
            assert!(d.join(format!("est/M_{i:02}.png")).is_file());
        }
        let history = fs::read_to_string(d.join("history.csv")).unwrap();
        assert!(history.starts_with("iter,total,image,time,sharp\n"));
        assert_eq!(history, fs::read_to_string(e2.join(&sample.id).join("history.csv")).unwrap());
        let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("solve.json")).unwrap()).unwrap();
        assert!(meta.get("wall_time_s").is_none());
    }

    let csv = dir.path().join("eval.csv");
    ok(&[
        "--config", &cfg, "eval", "--data", s(&data), "--est", s(&e1), "--baseline", "background", "--out", s(&csv),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "id,method,psnr_db,ssim,tiou,direction,wall_time_s");
    assert_eq!(lines.len(), 1 + 2 * 2 + 2);
    assert!(lines[lines.len() - 2].starts_with("MEAN,solver,"));
    for l in lines.iter().filter(|l| l.contains(",baseline-B,")) {
        assert_eq!(l.split(',').nth(4), Some(""), "baseline row has a TIoU: {l}");
    }

    // Ground truth dropped in as the estimate scores perfectly.
    let gt = dir.path().join("gt");
    for sample in &samples {
        let d = gt.join(&sample.id);
        fs::create_dir_all(d.join("est")).unwrap();
        for (i, r) in sample.gt_stack.renderings().iter().enumerate() {
            save_png(&r.f, d.join(format!("est/F_{i:02}.png")), BitDepth::Sixteen).unwrap();
            save_png(&r.m, d.join(format!("est/M_{i:02}.png")), BitDepth::Sixteen).unwrap();
        }
        let mut meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(e1.join(&sample.id).join("solve.json")).unwrap()).unwrap();
        meta["n_subframes"] = sample.gt_stack.len().into();
        fs::write(d.join("solve.json"), meta.to_string()).unwrap();
    }
    let gt_csv = dir.path().join("gt.csv");
    ok(&["--config", &cfg, "eval", "--data", s(&data), "--est", s(&gt), "--out", s(&gt_csv)]);
    let text = fs::read_to_string(&gt_csv).unwrap();
    let mean = text.lines().last().unwrap();
    let f: Vec<&str> = mean.split(',').collect();
    assert_eq!(&f[..2], ["MEAN", "solver"]);
    let num = |k: usize| f[k].parse::<f64>().unwrap();
    assert!(num(2) >= 60.0, "{mean}");
    assert!((num(3) - 1.0).abs() < 1e-4, "{mean}");
    assert!((num(4) - 1.0).abs() < 1e-3, "{mean}");
}

#[test]
fn solve_on_empty_dataset_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    fs::write(data.join("manifest.json"), r#"{"version": 1, "generator": null, "samples": []}"#).unwrap();
    let out = ok(&["solve", "--data", s(&data), "--out", s(&dir.path().join("est"))]);
    assert!(out.contains("solved 0, failed 0"), "{out}");
}

#[test]
fn check_passes_and_detects_fault() {
    let out = ok(&["check"]);
    let families: std::collections::BTreeSet<&str> = out
        .lines()
        .filter_map(|l| l.strip_prefix("[PASS] "))
        .filter_map(|l| l.split('/').next())
        .collect();
    assert!(families.len() >= 4, "{families:?}");
    assert!(!out.contains("[FAIL]"));

    let bad = fmo(&["check", "--inject-fault", "sharp-sign"]);
    assert!(!bad.status.success());
    let stdout = String::from_utf8_lossy(&bad.stdout);
    assert!(stdout.contains("[FAIL] gradients/finite-differences"), "{stdout}");
    assert!(String::from_utf8_lossy(&bad.stderr).contains("gradients/finite-differences"));
}

#[test]
fn rejects_unknown_config_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"version": 1, "cuont": 3}"#);
    let out = fmo(&["--config", &cfg, "synth", "--out", s(&dir.path().join("d"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("cuont"), "{err}");
    let cfg = write_config(dir.path(), r#"{"count": 3}"#);
    assert!(!fmo(&["--config", &cfg, "synth"]).status.success());
}

#[test]
fn manifest_seeds_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"version": 1, "canvas": [32, 32], "n_gt": 2, "count": 100}"#);
    let data = dir.path().join("data");
    ok(&["--config", &cfg, "--jobs", "0", "synth", "--out", s(&data)]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    let seeds: std::collections::BTreeSet<u64> = manifest["samples"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["scene"]["seed"].as_u64().unwrap())
        .collect();
    assert_eq!(seeds.len(), 100);
    assert_eq!(manifest["generator"]["count"], 100);
}
