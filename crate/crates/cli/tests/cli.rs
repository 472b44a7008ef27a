use std::path::Path;
use std::process::{Command, Output};

use geotransfer::field::Archive;
use geotransfer::pipeline::{Checkpoint, Stage};
use geotransfer_cli::{MARKER, METRICS_LOG, RESOLVED_CONFIG, RUN_LOG};

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geotransfer"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["make-scene", "pretrain", "stylize", "render", "evaluate"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    assert_eq!(cli(dir.path(), &["--version"]).status.code(), Some(0));
    assert_eq!(cli(dir.path(), &["stylize", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(dir.path(), &[]).status.code(), Some(2));
    assert_eq!(cli(dir.path(), &["explode"]).status.code(), Some(2));
    assert_eq!(cli(dir.path(), &["pretrain", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn invalid_override_is_a_config_error_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), &["make-scene", "--out", "scene", "--resolution", "8", "--size", "16", "--views", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for set in ["pretrain.no_such_key=1", "pretrain.iterations=\"many\"", "stylize.lr_color=-1", "justakey"] {
        let o = cli(dir.path(), &["pretrain", "--data", "scene", "--out", "run", "--set", set]);
        assert_eq!(o.status.code(), Some(4), "{set}: {}", stderr(&o));
        assert!(stderr(&o).trim_end().lines().last().unwrap().starts_with("error[config]:"));
        assert!(!dir.path().join("run").exists(), "{set} created outputs");
    }
    std::fs::write(dir.path().join("cfg.json"), r#"{"stylize": {"iterationz": 3}}"#).unwrap();
    let o = cli(dir.path(), &["pretrain", "--data", "scene", "--out", "run", "--config", "cfg.json"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("stylize.iterationz"));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn missing_inputs_map_to_their_categories() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), &["pretrain", "--data", "nowhere", "--out", "run"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("error[invalid-input]"));
    std::fs::write(dir.path().join("junk.gtck"), b"not a checkpoint at all").unwrap();
    let o = cli(dir.path(), &["render", "--checkpoint", "junk.gtck", "--data", "nowhere", "--out", "r"]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(!dir.path().join("r").exists());
}

#[test]
fn smoke_chain_emits_declared_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let o = cli(d, args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        o
    };
    run(&["make-scene", "--out", "scene", "--preset", "two-tone-sphere", "--resolution", "16", "--size", "24", "--views", "3", "--style-size", "32"]);
    for f in ["cameras.json", "scene.json", "ground_truth.gtck", "style_rgb.png", "style_depth.png", "style_depth.depth", "images/000.png", "depth/002.depth"] {
        assert!(d.join("scene").join(f).exists(), "{f}");
    }
    let small = ["--set", "pretrain.resolution=[16,16,16]", "--set", "pretrain.render.n_samples=24", "--set", "stylize.render.n_samples=24"];
    let mut args = vec!["pretrain", "--data", "scene", "--out", "pre", "--set", "pretrain.iterations=40", "--set", "pretrain.log_every=10"];
    args.extend(small);
    run(&args);
    let metrics = std::fs::read_to_string(d.join("pre").join(METRICS_LOG)).unwrap();
    let last: serde_json::Value = serde_json::from_str(metrics.lines().last().unwrap()).unwrap();
    assert!(last["psnr"].as_f64().unwrap() > 10.0);
    let style = ["--style-rgb", "scene/style_rgb.png", "--style-depth", "scene/style_depth.depth"];
    let mut args = vec!["stylize", "--checkpoint", "pre/pretrained.gtck", "--data", "scene", "--out", "sty", "--set", "stylize.iterations=4", "--checkpoint-every", "2"];
    args.extend(style);
    run(&args);
    let ckpt = Checkpoint::<f32>::load(&d.join("sty/stylized.gtck")).unwrap();
    assert_eq!(ckpt.stage, Stage::Stylized);
    assert!(!d.join("sty/stylizing.gtck").exists());
    let density = |p: &str| Archive::load(&d.join(p)).unwrap().tensor("field.density").unwrap().to_vec();
    assert_eq!(density("pre/pretrained.gtck"), density("sty/stylized.gtck"));
    run(&["render", "--checkpoint", "sty/stylized.gtck", "--data", "scene", "--out", "ren", "--compare"]);
    for f in ["rgb_000.png", "depth_000.png", "depth_000.depth", "compare_002.png"] {
        assert!(d.join("ren").join(f).exists(), "{f}");
    }
    let strip = image::open(d.join("ren/compare_000.png")).unwrap();
    assert_eq!((strip.width(), strip.height()), (48, 48));
    run(&["render", "--checkpoint", "sty/stylized.gtck", "--data", "scene", "--out", "arc", "--arc", "5", "--no-deformation"]);
    assert!(d.join("arc/rgb_004.png").exists());
    let mut args = vec!["evaluate", "--checkpoint", "sty/stylized.gtck", "--data", "scene", "--out", "ev", "--views", "2"];
    args.extend(style);
    let o = run(&args);
    assert!(String::from_utf8_lossy(&o.stdout).contains("Depth"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("ev/metrics.json")).unwrap()).unwrap();
    assert_eq!(report["views"].as_array().unwrap().len(), 2);
    assert!(d.join("ev/metrics.txt").exists());
    for out in ["scene", "pre", "sty", "ren", "arc", "ev"] {
        assert!(!d.join(out).join(MARKER).exists(), "{out} left a marker");
        assert!(d.join(out).join(RESOLVED_CONFIG).exists());
        assert!(d.join(out).join(RUN_LOG).exists());
    }
}

#[test]
fn stylize_requires_style_depth_and_marks_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = cli(d, &["make-scene", "--out", "scene", "--resolution", "8", "--size", "16", "--views", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let o = cli(d, &["pretrain", "--data", "scene", "--out", "pre", "--set", "pretrain.iterations=2", "--set", "pretrain.resolution=[8,8,8]"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = cli(d, &["stylize", "--checkpoint", "pre/pretrained.gtck", "--data", "scene", "--style-rgb", "scene/style_rgb.png", "--out", "sty"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("depth"));
    assert!(!d.join("sty").exists());
}
