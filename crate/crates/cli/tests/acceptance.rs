//! End-to-end CLI checks, including the determinism acceptance criterion:
//! re-running the full pipeline with an identical configuration must
//! reproduce every output byte for byte.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mitoscan"))
}

fn run_ok(args: &[&str]) {
    let out = bin().args(args).output().expect("spawn mitoscan");
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn run_fail(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn mitoscan");
    assert!(!out.status.success(), "command {args:?} unexpectedly succeeded");
    out
}

/// Runs synth → gtmap → mask → select → targets → evaluate → render into
/// `root`, all derived from one configuration.
fn full_pipeline(root: &Path) {
    let d = |s: &str| root.join(s).display().to_string();
    run_ok(&[
        "synth", "--out", &d("data"), "--seed", "7", "--cases", "2", "--jobs", "2",
        "--width", "20000", "--height", "15000",
    ]);
    run_ok(&[
        "gtmap", "--slides", &d("data/slides.json"), "--annotations", &d("data/synth_000.csv"),
        "--out", &d("gt"),
    ]);
    run_ok(&["mask", "--thumbnail", &d("data/synth_000.thumb.json"), "--out", &d("mask"), "--pgm"]);
    run_ok(&[
        "select", "--density", &d("gt/synth_000.gtmc.json"), "--mask", &d("mask/synth_000.valid.json"),
        "--out", &d("foi.json"),
    ]);
    run_ok(&[
        "targets", "--slides", &d("data/slides.json"), "--annotations", &d("data/synth_000.csv"),
        "--slide-id", "synth_000", "--thumbnail", &d("data/synth_000.thumb.json"),
        "--out", &d("targets.csv"), "--n", "5",
    ]);
    run_ok(&[
        "evaluate", "--slides", &d("data/slides.json"), "--annotations", &d("data/synth_000.csv"),
        "--thumbs", &d("data"), "--out", &d("eval"), "--selections", &d("foi.json"),
    ]);
    run_ok(&["render", "--input", &d("gt/synth_000.gtmc.json"), "--out", &d("render")]);
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn criterion_10_end_to_end_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    full_pipeline(root);
    let first = snapshot(root);
    assert!(first.len() > 15, "pipeline produced too few outputs: {}", first.len());
    full_pipeline(root);
    let second = snapshot(root);
    let identical = first == second;
    println!(
        "criterion 10 (end-to-end determinism): {}",
        if identical { "PASS" } else { "FAIL" }
    );
    assert!(identical, "criterion 10 (end-to-end determinism) failed");
}

#[test]
fn synth_emits_per_case_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("out");
    run_ok(&[
        "synth", "--out", &d.display().to_string(), "--seed", "7", "--cases", "3",
        "--width", "15000", "--height", "12000",
    ]);
    let slides: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("slides.json")).unwrap()).unwrap();
    assert_eq!(slides.as_array().unwrap().len(), 3);
    for i in 0..3 {
        for suffix in ["csv", "thumb.json", "thumb.f32", "planted.json"] {
            assert!(d.join(format!("synth_{i:03}.{suffix}")).exists(), "missing {suffix} for case {i}");
        }
    }
    assert!(d.join("manifest-synth.json").exists());
}

#[test]
fn select_emits_default_foi_dims() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let d = |s: &str| root.join(s).display().to_string();
    run_ok(&[
        "synth", "--out", &d("data"), "--seed", "3", "--cases", "1",
        "--width", "20000", "--height", "15000",
    ]);
    run_ok(&[
        "gtmap", "--slides", &d("data/slides.json"), "--annotations", &d("data/synth_000.csv"),
        "--out", &d("gt"),
    ]);
    run_ok(&["mask", "--thumbnail", &d("data/synth_000.thumb.json"), "--out", &d("mask")]);
    run_ok(&[
        "select", "--density", &d("gt/synth_000.gtmc.json"), "--mask", &d("mask/synth_000.valid.json"),
        "--out", &d("foi.json"), "--area", "2.37", "--aspect", "4:3",
    ]);
    let foi: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("foi.json")).unwrap()).unwrap();
    let rec = &foi.as_array().unwrap()[0];
    assert_eq!(rec["width_px"], 7111.0);
    assert_eq!(rec["height_px"], 5333.0);
}

#[test]
fn evaluate_unknown_slide_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let d = |s: &str| root.join(s).display().to_string();
    run_ok(&[
        "synth", "--out", &d("data"), "--seed", "1", "--cases", "1",
        "--width", "15000", "--height", "12000",
    ]);
    // selections referencing a slide absent from the registry
    std::fs::write(
        root.join("foi.json"),
        r#"[{"slide_id":"ghost_slide","selector_id":"r1","center_x_px":5000.0,"center_y_px":5000.0,"width_px":7111.0,"height_px":5333.0}]"#,
    )
    .unwrap();
    let out = run_fail(&[
        "evaluate", "--slides", &d("data/slides.json"), "--annotations", &d("data/synth_000.csv"),
        "--thumbs", &d("data"), "--out", &d("eval"), "--selections", &d("foi.json"),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ghost_slide"), "stderr was: {stderr}");
    assert_eq!(stderr.trim().lines().count(), 1, "stderr must be a single line");
    // partial outputs removed
    assert!(!root.join("eval/summary.json").exists());
    assert!(!root.join("eval/manifest-evaluate.json").exists());
}

#[test]
fn bad_aspect_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_fail(&[
        "select", "--density", "x.json", "--mask", "v.json",
        "--out", &tmp.path().join("foi.json").display().to_string(), "--aspect", "four:three",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn render_writes_range_named_png() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let d = |s: &str| root.join(s).display().to_string();
    run_ok(&[
        "synth", "--out", &d("data"), "--seed", "2", "--cases", "1",
        "--width", "15000", "--height", "12000",
    ]);
    run_ok(&["render", "--input", &d("data/synth_000.thumb.json"), "--out", &d("render")]);
    let names: Vec<String> = std::fs::read_dir(root.join("render"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    let png = names.iter().find(|n| n.ends_with(".png")).expect("no png written");
    // min-max range embedded in the filename
    assert!(png.starts_with("synth_000.thumb."), "got {png}");
    assert!(png.trim_end_matches(".png").contains('-'), "got {png}");
}
