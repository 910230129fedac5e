use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "total_iters": 6,
  "depth_stage_iters": 3,
  "ray_batch": 32,
  "samples_per_ray": 8,
  "anchors_per_iter": 8,
  "patch_size": 4,
  "patch_stride": 1,
  "eval_every": 3,
  "checkpoint_every": 3,
  "model": {
    "plane_resolution": 8,
    "plane_channels": 4,
    "density_depth": 1,
    "density_width": 8,
    "base_depth": 1,
    "base_width": 8,
    "color_depth": 1,
    "color_width": 8,
    "reference_channels": 16
  }
}"#;

fn tridf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tridf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tridf(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, resolution: &str) {
    ok(&["synth", "--out", s(dir), "--views", "4", "--resolution", resolution, "--points", "200"]);
}

#[test]
fn synth_writes_a_loadable_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("scene");
    synth(&dir, "16");
    for f in ["cameras.json", "split.json", "points.csv", "synthetic.json", "depth/view_000.png"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    let scene = tridf::scene::load_scene(&dir).unwrap();
    assert_eq!(scene.train_ids, vec![0, 2, 3]);
    assert_eq!(scene.test_ids, vec![1]);
}

#[test]
fn train_render_eval_round() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    let run = tmp.path().join("run");
    synth(&scene, "16");
    let config = tmp.path().join("tiny.json");
    std::fs::write(&config, TINY).unwrap();

    let out = ok(&["train", "--scene", s(&scene), "--config", s(&config), "--out", s(&run)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("final test psnr"));
    for f in ["model.ckpt", "metrics.csv", "config.json", "anchors.csv"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next(),
        Some("iter,L_color,L_depth,L_smooth,L_total,psnr_test,ssim_test,elapsed_s")
    );
    assert_eq!(lines.count(), 6);

    let image = tmp.path().join("view.png");
    let depth = tmp.path().join("view_depth.png");
    let pose = tmp.path().join("pose.json");
    let cameras: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(scene.join("cameras.json")).unwrap()).unwrap();
    std::fs::write(&pose, cameras["cameras"][1].to_string()).unwrap();
    ok(&["render", "--model", s(&run), "--pose", s(&pose), "--out", s(&image), "--depth", s(&depth)]);
    let rendered = tridf::scene::Image::load_png(&image).unwrap();
    assert_eq!((rendered.width(), rendered.height()), (16, 16));
    assert!(depth.exists());

    let report = tmp.path().join("report.csv");
    ok(&["eval", "--model", s(&run), "--scene", s(&scene), "--report", s(&report)]);
    let text = std::fs::read_to_string(&report).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "view_id,psnr,ssim");
    assert_eq!(rows.len(), 1 + 1 + 1);
    assert!(rows[2].starts_with("mean,"));

    ok(&["eval", "--model", s(&run), "--scene", s(&scene), "--report", s(&report), "--split", "train"]);
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 1 + 3 + 1);
}

#[test]
fn commands_are_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, "16");
    synth(&b, "16");
    for f in ["cameras.json", "points.csv", "images/view_000.png", "depth/view_002.png"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(tridf(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(tridf(&["train", "--scene", "x"]).status.code(), Some(2));
    let dir = tmp.path().join("scene");
    let out = tridf(&["synth", "--out", s(&dir), "--resolution", "8"]);
    assert_eq!(out.status.code(), Some(2));

    synth(&dir, "16");
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"total_iterations": 5}"#).unwrap();
    let out = tridf(&["train", "--scene", s(&dir), "--config", s(&bad), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("total_iterations"));
}

#[test]
fn runtime_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere");
    let out = tridf(&["train", "--scene", s(&missing), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cameras.json"));
}

#[test]
fn eval_rejects_a_model_from_another_resolution() {
    let tmp = tempfile::tempdir().unwrap();
    let (small, large, run) = (tmp.path().join("s"), tmp.path().join("l"), tmp.path().join("run"));
    synth(&small, "16");
    synth(&large, "20");
    let config = tmp.path().join("tiny.json");
    std::fs::write(&config, TINY).unwrap();
    ok(&["train", "--scene", s(&small), "--config", s(&config), "--out", s(&run)]);
    let out = tridf(&["eval", "--model", s(&run), "--scene", s(&large), "--report", s(&tmp.path().join("r.csv"))]);
    assert_eq!(out.status.code(), Some(1));
}
