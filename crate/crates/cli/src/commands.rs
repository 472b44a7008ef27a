use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use geotransfer::eval::{evaluate_scene, Sifid};
use geotransfer::image::Image;
use geotransfer::perspective::StylePair;
use geotransfer::pipeline::{pretrain, Checkpoint, Metrics, Stage, Stylizer, TrainConfig};
use geotransfer::render::{render_view, Camera, RenderOptions};
use geotransfer::scenes::{
    generate_scene, load_dataset, load_style_pair, procedural_style, save_dataset, write_depth_png16,
    write_depth_sidecar, write_png_rgb, CameraArc, StyleKind, SyntheticSceneSpec,
};
use geotransfer::{Error, Result, SceneDataset32};
use serde_json::json;

use crate::args::{
    ConfigArgs, EvaluateArgs, MakeSceneArgs, Preset, PretrainArgs, RenderArgs, StyleArg, StyleArgs, StylizeArgs,
};
use crate::logging;
use crate::overrides::resolve;

pub const MARKER: &str = "INCOMPLETE";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const RUN_LOG: &str = "run.log";
pub const METRICS_LOG: &str = "metrics.jsonl";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// An output directory in use by one command. The `INCOMPLETE` marker stays
/// behind unless [`RunDir::finish`] is reached.
struct RunDir {
    path: PathBuf,
}

impl RunDir {
    fn open(path: &Path, command: &str, resolved: &serde_json::Value) -> Result<Self> {
        fs::create_dir_all(path).map_err(io_err(path))?;
        let marker = path.join(MARKER);
        write_text(&marker, &format!("{command} did not finish; outputs in this directory are partial\n"))?;
        let log_path = path.join(RUN_LOG);
        logging::attach(&log_path).map_err(io_err(&log_path))?;
        log::info!("{command} started, writing to {}", path.display());
        let text = serde_json::to_string_pretty(resolved)? + "\n";
        write_text(&path.join(RESOLVED_CONFIG), &text)?;
        Ok(RunDir { path: path.to_path_buf() })
    }

    fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    fn finish(self, command: &str) -> Result<()> {
        log::info!("{command} finished");
        logging::detach();
        let marker = self.path.join(MARKER);
        fs::remove_file(&marker).map_err(io_err(&marker))
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        logging::detach();
    }
}

struct MetricsLog {
    out: BufWriter<File>,
    path: PathBuf,
    error: Option<std::io::Error>,
}

impl MetricsLog {
    fn create(path: PathBuf) -> Result<Self> {
        let f = File::create(&path).map_err(io_err(&path))?;
        Ok(MetricsLog {
            out: BufWriter::new(f),
            path,
            error: None,
        })
    }

    fn push(&mut self, m: &Metrics) {
        log::info!("{}", m.to_json_line());
        if self.error.is_none() {
            if let Err(e) = writeln!(self.out, "{}", m.to_json_line()) {
                self.error = Some(e);
            }
        }
    }

    fn close(mut self) -> Result<()> {
        let r = match self.error.take() {
            Some(e) => Err(e),
            None => self.out.flush(),
        };
        r.map_err(io_err(&self.path))
    }
}

fn config_from(base: &TrainConfig, args: &ConfigArgs) -> Result<TrainConfig> {
    resolve(base, args.config.as_deref(), &args.set, args.seed)
}

fn with_dataset_range(opts: &RenderOptions, data: &SceneDataset32) -> RenderOptions {
    RenderOptions {
        near: opts.near.or(data.near),
        far: opts.far.or(data.far),
        ..opts.clone()
    }
}

fn load_style(args: &StyleArgs) -> Result<StylePair<f32>> {
    let (pair, _) = load_style_pair::<f32>(&args.style_rgb, args.style_depth.as_deref())?;
    Ok(pair)
}

pub fn make_scene(args: &MakeSceneArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str::<SyntheticSceneSpec>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => match args.preset {
            Preset::Default => SyntheticSceneSpec::default(),
            Preset::TwoToneSphere => SyntheticSceneSpec::two_tone_sphere(),
            Preset::TexturedBox => SyntheticSceneSpec::textured_box(),
            Preset::TwoPlanes => SyntheticSceneSpec::two_planes(2.0, 3.5),
        },
    };
    if let Some(n) = args.resolution {
        spec.resolution = [n; 3];
    }
    if let Some(s) = args.size {
        spec.camera.width = s;
        spec.camera.height = s;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    if args.views == 0 {
        return Err(Error::InvalidInput("--views must be at least 1".into()));
    }
    let kind = match args.style {
        StyleArg::Waves => StyleKind::Waves,
        StyleArg::Dots => StyleKind::Dots,
        StyleArg::Bricks => StyleKind::Bricks,
    };
    if args.style_size == 0 {
        return Err(Error::InvalidInput("--style-size must be positive".into()));
    }
    let resolved = json!({
        "command": "make-scene",
        "scene": spec,
        "views": args.views,
        "style": { "kind": kind, "size": args.style_size, "seed": spec.seed },
    });
    let run = RunDir::open(&args.out, "make-scene", &resolved)?;
    let (dataset, truth) = generate_scene::<f32>(&spec, args.views)?;
    save_dataset(&dataset, &args.out)?;
    write_text(&run.join("scene.json"), &(serde_json::to_string_pretty(&spec)? + "\n"))?;
    truth.save(&run.join("ground_truth.gtck"))?;
    let style = procedural_style::<f32>(kind, args.style_size, args.style_size, spec.seed)?;
    write_png_rgb(&run.join("style_rgb.png"), &style.rgb)?;
    write_depth_png16(&run.join("style_depth.png"), &style.depth)?;
    write_depth_sidecar(&run.join("style_depth.depth"), &style.depth)?;
    println!(
        "scene: {} views at {}x{}, {}^3 ground truth, {} style -> {}",
        args.views,
        spec.camera.width,
        spec.camera.height,
        spec.resolution[0],
        kind.name(),
        args.out.display()
    );
    run.finish("make-scene")
}

pub fn pretrain_cmd(args: &PretrainArgs) -> Result<()> {
    let cfg = config_from(&TrainConfig::default(), &args.cfg)?;
    let dataset = load_dataset::<f32>(&args.data)?;
    let resolved = serde_json::to_value(&cfg)?;
    let run = RunDir::open(&args.out, "pretrain", &resolved)?;
    let mut metrics = MetricsLog::create(run.join(METRICS_LOG))?;
    let (field, report) = pretrain(&dataset, &cfg, &mut |m| metrics.push(m))?;
    metrics.push(&Metrics {
        stage: "pretrain".into(),
        iteration: report.iterations,
        loss: report.final_loss.unwrap_or(0.0),
        psnr: Some(report.psnr),
        ..Default::default()
    });
    metrics.close()?;
    Checkpoint::pretrained(field, cfg, report.iterations, report.psnr).save(&run.join("pretrained.gtck"))?;
    println!(
        "pretrained {} iterations, training PSNR {:.2} dB -> {}",
        report.iterations,
        report.psnr,
        args.out.join("pretrained.gtck").display()
    );
    run.finish("pretrain")
}

pub fn stylize_cmd(args: &StylizeArgs) -> Result<()> {
    let ckpt = Checkpoint::<f32>::load(&args.checkpoint)?;
    if ckpt.stage == Stage::Stylized {
        return Err(Error::InvalidInput(format!(
            "{} is already stylized; start from a pretrained checkpoint",
            args.checkpoint.display()
        )));
    }
    let dataset = load_dataset::<f32>(&args.data)?;
    let style = load_style(&args.style)?;
    let mut cfg = config_from(&ckpt.config, &args.cfg)?;
    cfg.stylize.render = with_dataset_range(&cfg.stylize.render, &dataset);
    if args.checkpoint_every == Some(0) {
        return Err(Error::InvalidInput("--checkpoint-every must be at least 1".into()));
    }
    let cameras = dataset.cameras();
    let resolved = serde_json::to_value(&cfg)?;
    let mut st = match ckpt.stage {
        Stage::Stylizing => {
            log::info!("resuming stylization at iteration {}", ckpt.iteration);
            Stylizer::from_checkpoint(Checkpoint { config: cfg.clone(), ..ckpt }, &cameras, &style)?
        }
        _ => Stylizer::new(ckpt.field, &cameras, &style, &cfg)?,
    };
    let run = RunDir::open(&args.out, "stylize", &resolved)?;
    let mut metrics = MetricsLog::create(run.join(METRICS_LOG))?;
    let partial = run.join("stylizing.gtck");
    let total = cfg.stylize.iterations;
    let every = cfg.stylize.log_every;
    while st.iteration() < total {
        let r = st.step()?;
        if every > 0 && (r.iteration % every == 0 || r.iteration + 1 == total) {
            metrics.push(&Metrics {
                stage: "stylize".into(),
                iteration: r.iteration,
                loss: r.loss,
                style: Some(r.style),
                content: Some(r.content),
                smoothness: Some(r.smoothness),
                ..Default::default()
            });
        }
        if args.checkpoint_every.is_some_and(|n| st.iteration() % n == 0) && st.iteration() < total {
            st.checkpoint().save(&partial)?;
        }
    }
    metrics.close()?;
    let (field, report) = st.finish()?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let out_ckpt = Checkpoint {
        stage: Stage::Stylized,
        iteration: report.iterations,
        config: cfg,
        field,
        optimizer: None,
        layout: report.layout.clone(),
        reference_color: None,
        psnr: None,
    };
    out_ckpt.save(&run.join("stylized.gtck"))?;
    if partial.exists() {
        fs::remove_file(&partial).map_err(io_err(&partial))?;
    }
    println!(
        "stylized {} iterations, final loss {} -> {}",
        report.iterations,
        report.final_loss.map_or("n/a".to_string(), |l| format!("{l:.6}")),
        args.out.join("stylized.gtck").display()
    );
    run.finish("stylize")
}

/// Cameras on an arc around the scene center, matching the dataset's image
/// size, field of view and viewing distance.
fn arc_cameras(data: &SceneDataset32, n: usize) -> Result<Vec<Camera>> {
    let first = &data.frames[0].camera;
    let target: [f64; 3] = std::array::from_fn(|a| 0.5 * (data.bounds_min[a] + data.bounds_max[a]));
    let p = first.position();
    let distance = (0..3).map(|a| (p[a] - target[a]).powi(2)).sum::<f64>().sqrt();
    let k = &first.intrinsics;
    let arc = CameraArc {
        target,
        distance,
        fov_y_degrees: (2.0 * (0.5 * k.height as f64 / k.fy).atan()).to_degrees(),
        width: k.width,
        height: k.height,
        ..Default::default()
    };
    arc.cameras(n)
}

fn depth_preview(depth: &Image<f32>, lo: f32, hi: f32) -> Image<f32> {
    let range = hi - lo;
    Image::from_fn(depth.width, depth.height, 3, |x, y, _| {
        if range > 0.0 {
            (depth.get(x, y, 0) - lo) / range
        } else {
            0.5
        }
    })
}

/// Tiles equally sized images row by row.
fn tile(rows: &[Vec<&Image<f32>>]) -> Image<f32> {
    let (w, h) = (rows[0][0].width, rows[0][0].height);
    let cols = rows[0].len();
    Image::from_fn(w * cols, h * rows.len(), 3, |x, y, c| rows[y / h][x / w].get(x % w, y % h, c))
}

pub fn render_cmd(args: &RenderArgs) -> Result<()> {
    let ckpt = Checkpoint::<f32>::load(&args.checkpoint)?;
    let dataset = load_dataset::<f32>(&args.data)?;
    let cfg = config_from(&ckpt.config, &args.cfg)?;
    let opts = with_dataset_range(&cfg.stylize.render, &dataset);
    let cameras = match args.arc {
        Some(0) => return Err(Error::InvalidInput("--arc needs at least one view".into())),
        Some(n) => arc_cameras(&dataset, n)?,
        None => dataset.cameras(),
    };
    let resolved = json!({
        "command": "render",
        "render": opts,
        "deformation": !args.no_deformation,
        "compare": args.compare,
        "views": cameras.len(),
    });
    let run = RunDir::open(&args.out, "render", &resolved)?;
    for (i, cam) in cameras.iter().enumerate() {
        let main = render_view(&ckpt.field, cam, &opts, !args.no_deformation)?;
        write_png_rgb(&run.join(&format!("rgb_{i:03}.png")), &main.rgb)?;
        write_depth_png16(&run.join(&format!("depth_{i:03}.png")), &main.depth)?;
        write_depth_sidecar(&run.join(&format!("depth_{i:03}.depth")), &main.depth)?;
        if args.compare {
            let (plain, deformed) = if args.no_deformation {
                (main.clone(), render_view(&ckpt.field, cam, &opts, true)?)
            } else {
                (render_view(&ckpt.field, cam, &opts, false)?, main.clone())
            };
            let all = plain.depth.data.iter().chain(&deformed.depth.data);
            let lo = all.clone().copied().fold(f32::INFINITY, f32::min);
            let hi = all.copied().fold(f32::NEG_INFINITY, f32::max);
            let (dp, dd) = (depth_preview(&plain.depth, lo, hi), depth_preview(&deformed.depth, lo, hi));
            let strip = tile(&[vec![&plain.rgb, &deformed.rgb], vec![&dp, &dd]]);
            write_png_rgb(&run.join(&format!("compare_{i:03}.png")), &strip)?;
        }
    }
    println!("rendered {} views -> {}", cameras.len(), args.out.display());
    run.finish("render")
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let ckpt = Checkpoint::<f32>::load(&args.checkpoint)?;
    let dataset = load_dataset::<f32>(&args.data)?;
    let style = load_style(&args.style)?;
    let cfg = config_from(&ckpt.config, &args.cfg)?;
    let opts = with_dataset_range(&cfg.stylize.render, &dataset);
    let mut cameras = dataset.cameras();
    if let Some(n) = args.views {
        if n == 0 {
            return Err(Error::InvalidInput("--views must be at least 1".into()));
        }
        cameras.truncate(n);
    }
    let metric = Sifid::new(cfg.stylize.extractor.build::<f32>()?)?;
    let resolved = json!({
        "command": "evaluate",
        "render": opts,
        "extractor": cfg.stylize.extractor,
        "views": cameras.len(),
    });
    let run = RunDir::open(&args.out, "evaluate", &resolved)?;
    let report = evaluate_scene(&ckpt.field, &cameras, &style, &metric, &opts)?;
    write_text(&run.join("metrics.json"), &(report.to_json() + "\n"))?;
    let table = report.to_table();
    write_text(&run.join("metrics.txt"), &table)?;
    print!("{table}");
    run.finish("evaluate")
}
