//! `tridf`: synthesize fixtures, train, render and evaluate.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use tridf::field::{load_checkpoint, TriDF};
use tridf::render::{render_view, RenderSettings};
use tridf::scene::dataset::CameraEntry;
use tridf::scene::image::save_depth_png;
use tridf::scene::{load_point_cloud, load_scene, save_scene, synth_scene, SynthConfig};
use tridf::supervision::anchors::save_anchors;
use tridf::train::{evaluate, mean_metrics, train, RunOptions, TrainConfig, CHECKPOINT_FILE};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const POINTS_FILE: &str = "points.csv";

#[derive(Parser)]
#[command(name = "tridf", version, about = "Hybrid triplane radiance fields from a few posed views")]
struct Cli {
    /// Worker threads for rendering and gradient tasks.
    #[arg(long, global = true, env = "TRIDF_THREADS", default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scene with ground-truth depth and a point cloud.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        views: usize,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        /// Number of cloud points.
        #[arg(long, default_value_t = 1000)]
        points: usize,
        /// Fraction of cloud points with perturbed colors.
        #[arg(long, default_value_t = 0.2)]
        noise_fraction: f64,
        /// Scene size in world units (camera distance is 3.2x this).
        #[arg(long, default_value_t = SynthConfig::default().scale)]
        scale: f64,
    },
    /// Train a model on a scene directory.
    Train {
        #[arg(long)]
        scene: PathBuf,
        /// JSON training configuration; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a view from a trained model.
    Render {
        /// Training output directory or checkpoint file.
        #[arg(long)]
        model: PathBuf,
        /// Camera entry in the cameras.json format.
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write camera-space depth as a 16-bit PNG.
        #[arg(long)]
        depth: Option<PathBuf>,
    },
    /// Score a trained model against a scene's views.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Test,
    Train,
}

/// Failure category; decides the exit code.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<tridf::Error> for Failure {
    fn from(e: tridf::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let threads = cli.threads.max(1);
    let result = match cli.command {
        Command::Synth {
            out,
            seed,
            views,
            resolution,
            points,
            noise_fraction,
            scale,
        } => cmd_synth(
            &out,
            SynthConfig {
                seed,
                n_views: views,
                resolution,
                n_points: points,
                noise_fraction,
                scale,
                ..SynthConfig::default()
            },
        ),
        Command::Train { scene, config, out } => cmd_train(&scene, config.as_deref(), &out, threads),
        Command::Render { model, pose, out, depth } => cmd_render(&model, &pose, &out, depth.as_deref(), threads),
        Command::Eval {
            model,
            scene,
            report,
            split,
        } => cmd_eval(&model, &scene, &report, split, threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn cmd_synth(out: &Path, cfg: SynthConfig) -> Result<(), Failure> {
    cfg.validate().map_err(|e| Failure::Usage(e.into()))?;
    let (dataset, cloud, synthetic) = synth_scene(&cfg)?;
    save_scene(out, &dataset)?;
    cloud.save(&out.join(POINTS_FILE))?;
    let depth_dir = out.join("depth");
    std::fs::create_dir_all(&depth_dir).with_context(|| format!("creating {}", depth_dir.display()))?;
    for (i, (cam, depth)) in dataset.cameras.iter().zip(&synthetic.depth_maps).enumerate() {
        save_depth_png(&depth_dir.join(format!("view_{i:03}.png")), cam.width(), cam.height(), depth)?;
    }
    let meta = serde_json::to_string_pretty(&synthetic).context("serializing the synthetic scene")?;
    let path = out.join("synthetic.json");
    std::fs::write(&path, meta + "\n").with_context(|| format!("writing {}", path.display()))?;
    println!(
        "wrote {} views ({} train, {} test) and {} points to {}",
        dataset.cameras.len(),
        dataset.train_ids.len(),
        dataset.test_ids.len(),
        cloud.len(),
        out.display()
    );
    Ok(())
}

fn read_config(path: Option<&Path>) -> Result<TrainConfig, Failure> {
    let config: TrainConfig = match path {
        None => TrainConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
    };
    config
        .validate()
        .map_err(|e| usage(format!("invalid configuration: {e}")))?;
    Ok(config)
}

fn cmd_train(scene_dir: &Path, config: Option<&Path>, out: &Path, threads: usize) -> Result<(), Failure> {
    let config = read_config(config)?;
    let scene = load_scene(scene_dir)?;
    let points = scene_dir.join(POINTS_FILE);
    let cloud = if points.exists() {
        Some(load_point_cloud(&points)?)
    } else {
        None
    };
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let echo = serde_json::to_string_pretty(&config).context("serializing the configuration")?;
    let path = out.join("config.json");
    std::fs::write(&path, echo + "\n").with_context(|| format!("writing {}", path.display()))?;

    let options = RunOptions {
        out_dir: Some(out),
        threads,
    };
    let outcome = train(&scene, cloud.as_ref(), &config, options, |row| {
        if let (Some(p), Some(s)) = (row.psnr_test, row.ssim_test) {
            eprintln!(
                "iter {:>6}  loss {:.6}  test psnr {p:.3}  ssim {s:.4}  {:.1}s",
                row.iter + 1,
                row.report.total,
                row.elapsed_s
            );
        }
    })?;
    if !outcome.anchors.is_empty() {
        save_anchors(&out.join("anchors.csv"), &outcome.anchors, &scene.train_ids)?;
    }
    match outcome.log.iter().rev().find_map(|r| r.psnr_test.zip(r.ssim_test)) {
        Some((p, s)) => println!("final test psnr {p:.4} ssim {s:.4}"),
        None => println!("no test views evaluated"),
    }
    Ok(())
}

/// Loads `path` as a checkpoint file, or `path/model.ckpt` for a directory,
/// with the render settings recorded at training time.
fn load_model(path: &Path) -> Result<(TriDF, RenderSettings), Failure> {
    let file = if path.is_dir() { path.join(CHECKPOINT_FILE) } else { path.to_path_buf() };
    let (model, meta) = load_checkpoint(&file)?;
    let settings = match meta.get("config") {
        Some(c) => {
            let config: TrainConfig = serde_json::from_value(c.clone())
                .with_context(|| format!("{}: unreadable training configuration", file.display()))?;
            RenderSettings {
                samples: config.samples_per_ray,
                near: config.near,
                far: config.far,
            }
        }
        None => RenderSettings::default(),
    };
    Ok((model, settings))
}

fn cmd_render(model: &Path, pose: &Path, out: &Path, depth: Option<&Path>, threads: usize) -> Result<(), Failure> {
    let (model, settings) = load_model(model)?;
    let camera = CameraEntry::load(pose)?.to_camera()?;
    let view = render_view(&model, &camera, &settings, None, threads)?;
    view.image.save_png(out)?;
    if let Some(path) = depth {
        // Expected ray distance to camera-space depth.
        let (w, h) = (camera.width(), camera.height());
        let z: Vec<f64> = (0..h)
            .flat_map(|v| (0..w).map(move |u| (u, v)))
            .zip(&view.depth)
            .map(|((u, v), &t)| {
                let (_, dir) = camera.ray_through(u as f64 + 0.5, v as f64 + 0.5);
                t * camera.depth_per_unit_t(&dir)
            })
            .collect();
        save_depth_png(path, w, h, &z)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_eval(model: &Path, scene_dir: &Path, report: &Path, split: Split, threads: usize) -> Result<(), Failure> {
    let (model, settings) = load_model(model)?;
    let scene = load_scene(scene_dir)?;
    let views = match split {
        Split::Test => &scene.test_ids,
        Split::Train => &scene.train_ids,
    };
    if views.is_empty() {
        return Err(Failure::Runtime(anyhow!("the scene has no views in the requested split")));
    }
    check_compatible(&model, &scene)?;
    let metrics = evaluate(&model, &scene, views, &settings, None, threads)?;
    let mut csv = String::from("view_id,psnr,ssim\n");
    for m in &metrics {
        csv += &format!("{},{},{}\n", m.view, m.psnr, m.ssim);
    }
    let (p, s) = mean_metrics(&metrics).expect("at least one view");
    csv += &format!("mean,{p},{s}\n");
    std::fs::write(report, csv).with_context(|| format!("writing {}", report.display()))?;
    println!("mean psnr {p:.4} ssim {s:.4} over {} views", metrics.len());
    Ok(())
}

/// The model's reference views must be the scene's training views.
fn check_compatible(model: &TriDF, scene: &tridf::scene::SceneDataset) -> Result<(), Failure> {
    let train = scene.train_cameras();
    if train.len() != model.ref_cameras.len() {
        return Err(Failure::Runtime(anyhow!(
            "model was trained on {} views, the scene has {} training views",
            model.ref_cameras.len(),
            train.len()
        )));
    }
    for (a, b) in train.iter().zip(&model.ref_cameras) {
        if (a.width(), a.height()) != (b.width(), b.height()) {
            return Err(Failure::Runtime(anyhow!(
                "resolution mismatch: model views are {}x{}, scene views are {}x{}",
                b.width(),
                b.height(),
                a.width(),
                a.height()
            )));
        }
    }
    Ok(())
}
