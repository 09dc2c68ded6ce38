use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fgdvi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fgdvi")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = fgdvi(args);
    assert!(
        out.status.success(),
        "fgdvi {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SCENE: &str = r#"{
  "frames": 8,
  "height": 16,
  "width": 24,
  "channels": 3,
  "seed": 4,
  "background": {"kind": "waves", "scale": 0.8},
  "sprites": [
    {"texture": {"kind": "checker", "size": 2, "low": 0.2, "high": 0.9},
     "width": 6, "height": 5, "x": 2, "y": 5, "vx": 1, "vy": 0}
  ],
  "mask": {"style": "object", "dilate": 1}
}"#;

fn corpus(tmp: &TempDir) -> PathBuf {
    let scene = tmp.path().join("scene.json");
    fs::write(&scene, SCENE).unwrap();
    let out = tmp.path().join("corpus");
    ok(&["synth", "--scene", p(&scene), "--out", p(&out)]);
    out
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn count(files: &BTreeMap<PathBuf, Vec<u8>>, dir: &str, ext: &str) -> usize {
    files
        .keys()
        .filter(|k| k.starts_with(dir) && k.extension().is_some_and(|e| e == ext))
        .count()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn synth_layout_and_determinism() {
    let tmp = TempDir::new().unwrap();
    let first = corpus(&tmp);
    let files = tree(&first);
    assert_eq!(count(&files, "frames", "ppm"), 8);
    assert_eq!(count(&files, "masks", "pgm"), 8);
    assert_eq!(count(&files, "flow", "flo"), 14);
    assert!(files.contains_key(Path::new("manifest.json")));
    assert!(files.contains_key(Path::new("resolved_config.json")));

    let second = tmp.path().join("again");
    ok(&["synth", "--scene", p(&tmp.path().join("scene.json")), "--out", p(&second)]);
    assert_eq!(tree(&second), files);

    // refuses to overwrite
    let out = fgdvi(&["synth", "--scene", p(&tmp.path().join("scene.json")), "--out", p(&second)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_scene_leaves_nothing_behind() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("bad.json");
    fs::write(&scene, "{\"frames\": 3,").unwrap();
    let out_dir = tmp.path().join("out");
    let out = fgdvi(&["synth", "--scene", p(&scene), "--out", p(&out_dir)]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert!(!out_dir.exists());
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1, "temporary directory left behind");
}

#[test]
fn inpaint_counts_and_s0_equivalence() {
    let tmp = TempDir::new().unwrap();
    let input = corpus(&tmp);
    let interp = tmp.path().join("interp");
    ok(&["inpaint", "--input", p(&input), "--out", p(&interp), "--mode", "interp", "--steps", "10", "--interp-steps", "5"]);
    let log = json(&interp.join("call_log.json"));
    assert_eq!(log["total_frame_denoisings"], 60);
    let resolved = json(&interp.join("resolved_config.json"));
    assert_eq!(resolved["command"], "inpaint");
    assert_eq!(resolved["config"]["interp_steps"], 5);

    let vanilla = tmp.path().join("vanilla");
    let s0 = tmp.path().join("s0");
    ok(&["inpaint", "--input", p(&input), "--out", p(&vanilla), "--mode", "vanilla", "--seed", "9"]);
    ok(&["inpaint", "--input", p(&input), "--out", p(&s0), "--mode", "interp", "--interp-steps", "0", "--seed", "9"]);
    let frames = |d: &Path| tree(&d.join("frames"));
    assert_eq!(frames(&vanilla), frames(&s0));
    assert_eq!(json(&vanilla.join("call_log.json"))["total_frame_denoisings"], 80);
}

#[test]
fn missing_flow_names_the_pair() {
    let tmp = TempDir::new().unwrap();
    let input = corpus(&tmp);
    fs::remove_file(input.join("flow/bwd_0003.flo")).unwrap();
    let out = fgdvi(&["inpaint", "--input", p(&input), "--out", p(&tmp.path().join("o")), "--mode", "interp"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("4 -> 3") && err.contains("bwd_0003.flo"), "{err}");
}

#[test]
fn eval_of_ground_truth_is_capped() {
    let tmp = TempDir::new().unwrap();
    let input = corpus(&tmp);
    let out = ok(&["eval", "--input", p(&input), "--result", p(&input)]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["full"]["psnr"], 99.0);
    assert_eq!(report["hole"]["psnr"], 99.0);
    assert_eq!(report["e_warp"], 0.0);
    assert_eq!(report["full"]["per_frame_psnr"].as_array().unwrap().len(), 8);
}

#[test]
fn flow_command_feeds_inpaint() {
    let tmp = TempDir::new().unwrap();
    let input = corpus(&tmp);
    let flows = tmp.path().join("est");
    ok(&["flow", "--input", p(&input), "--out", p(&flows)]);
    assert_eq!(count(&tree(&flows), "", "flo"), 14);
    let out = tmp.path().join("o");
    ok(&["inpaint", "--input", p(&input), "--flow-dir", p(&flows), "--out", p(&out)]);
    let report: Value = serde_json::from_slice(&ok(&["eval", "--input", p(&input), "--result", p(&out)]).stdout).unwrap();
    assert!(report["hole"]["psnr"].as_f64().unwrap() > 10.0);
}

#[test]
fn bench_reports_call_and_wall_reductions() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"bench": {"steps": [4, 8], "frames": 4, "per_call_ms": 1.0}}"#).unwrap();
    let out = ok(&["bench", "--config", p(&cfg), "--out", p(tmp.path())]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    for (entry, t) in report["entries"].as_array().unwrap().iter().zip([4, 8]) {
        assert_eq!(entry["vanilla_frame_denoisings"], 4 * t);
        assert_eq!(entry["interp_frame_denoisings"], 3 * t);
        assert!(entry["wall_reduction"].is_number());
        assert_eq!(entry["call_reduction"], 0.25);
    }
    assert!(tmp.path().join("bench.json").is_file());
}

#[test]
fn exit_codes() {
    assert_eq!(fgdvi(&["--help"]).status.code(), Some(0));
    assert_eq!(fgdvi(&["--version"]).status.code(), Some(0));
    assert_eq!(fgdvi(&["inpaint", "--bogus"]).status.code(), Some(1));
    assert_eq!(fgdvi(&["inpaint"]).status.code(), Some(1));
    assert_eq!(fgdvi(&["eval", "--input", "/nonexistent/corpus", "--result", "/nonexistent"]).status.code(), Some(2));
    let tmp = TempDir::new().unwrap();
    let input = corpus(&tmp);
    // S > T is a configuration error
    let out = fgdvi(&["inpaint", "--input", p(&input), "--out", p(&tmp.path().join("o")), "--steps", "3", "--interp-steps", "4"]);
    assert_eq!(out.status.code(), Some(1));
}
