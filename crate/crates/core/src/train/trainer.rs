use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::field::{save_checkpoint, TriDF};
use crate::math::{Gradients, Tape, Tensor};
use crate::metrics::{psnr, ssim};
use crate::render::{
    occupancy_grid_update, render_patch, render_rays, render_view, OccupancyGrid, PatchSpec, RayQuery,
    RenderSettings, Shading,
};
use crate::scene::{Image, PointCloud, SceneDataset};
use crate::supervision::losses::{color_loss, depth_loss, smoothness_loss};
use crate::supervision::{build_anchors, total_loss, KeypointAnchor, LossReport, Stage};
use crate::train::config::TrainConfig;
use crate::train::optimizer::AdamW;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "iter,L_color,L_depth,L_smooth,L_total,psnr_test,ssim_test,elapsed_s";

/// One step of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub report: LossReport,
    pub psnr_test: Option<f64>,
    pub ssim_test: Option<f64>,
    pub elapsed_s: f64,
}

pub fn metrics_csv(rows: &[LogRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let p = &r.report;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{:.3}",
            r.iter,
            p.color,
            p.depth,
            p.smooth,
            p.total,
            opt(r.psnr_test),
            opt(r.ssim_test),
            r.elapsed_s
        );
    }
    out
}

/// Quality of one rendered view against its ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Renders each listed view of `scene` in eval mode and scores it.
pub fn evaluate(
    model: &TriDF,
    scene: &SceneDataset,
    views: &[usize],
    settings: &RenderSettings,
    grid: Option<&OccupancyGrid>,
    threads: usize,
) -> Result<Vec<ViewMetrics>> {
    views
        .iter()
        .map(|&v| {
            let (cam, gt) = scene
                .cameras
                .get(v)
                .zip(scene.images.get(v))
                .ok_or_else(|| Error::invalid(format!("view {v} does not exist")))?;
            let r = render_view(model, cam, settings, grid, threads)?;
            Ok(ViewMetrics {
                view: v,
                psnr: psnr(gt, &r.image)?,
                ssim: ssim(gt, &r.image)?,
            })
        })
        .collect()
}

/// Mean PSNR and SSIM over views.
pub fn mean_metrics(m: &[ViewMetrics]) -> Option<(f64, f64)> {
    if m.is_empty() {
        return None;
    }
    let n = m.len() as f64;
    Some((
        m.iter().map(|v| v.psnr).sum::<f64>() / n,
        m.iter().map(|v| v.ssim).sum::<f64>() / n,
    ))
}

/// Independent piece of a step's loss with its own tape.
enum Task {
    Color {
        rays: Vec<RayQuery>,
        gt: Tensor,
        scale: f64,
    },
    Depth {
        rays: Vec<RayQuery>,
        factor: Vec<f64>,
        target: Vec<f64>,
        weight: Vec<f64>,
        scale: f64,
    },
    Patch {
        camera: Camera,
        spec: PatchSpec,
        scale: f64,
    },
}

struct TaskOutput {
    value: f64,
    grads: Gradients,
}

/// Training state: model, optimizer moments, anchors and the sampler.
pub struct Trainer {
    pub model: TriDF,
    pub config: TrainConfig,
    pub optimizer: AdamW,
    pub anchors: Vec<KeypointAnchor>,
    pub grid: Option<OccupancyGrid>,
    cameras: Vec<Camera>,
    images: Vec<Image>,
    pixel_offsets: Vec<usize>,
    settings: RenderSettings,
    rng: ChaCha8Rng,
    threads: usize,
}

impl Trainer {
    /// Builds a fresh model for `scene` and, when the depth-guided stage is
    /// active, anchors from `cloud` projected into the training views.
    pub fn new(scene: &SceneDataset, cloud: Option<&PointCloud>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        scene.validate()?;
        let model = TriDF::new(config.model.clone(), scene, config.seed)?;
        Self::with_model(model, scene, cloud, config)
    }

    pub fn with_model(model: TriDF, scene: &SceneDataset, cloud: Option<&PointCloud>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let cameras = scene.train_cameras();
        let images = scene.train_images();
        if cameras.len() < 2 {
            return Err(Error::invalid("training needs at least two views"));
        }
        let needs_depth = config.depth_stage_iters() > 0 && config.loss_weights.depth != 0.0;
        let anchors = match (needs_depth, cloud) {
            (false, _) => Vec::new(),
            (true, None) => return Err(Error::invalid("the depth-guided stage needs a point cloud")),
            (true, Some(c)) => {
                let a = build_anchors(c, &cameras, &images)?;
                if a.is_empty() {
                    return Err(Error::invalid("no cloud point projects into two training views"));
                }
                a
            }
        };
        let needs_patch = config.depth_stage_iters() < config.total_iters && config.loss_weights.smooth != 0.0;
        if needs_patch {
            for cam in &cameras {
                let f = (config.patch_size - 1) * config.patch_stride + 1;
                if f > cam.width() || f > cam.height() {
                    return Err(Error::invalid(format!(
                        "{f}x{f} patch footprint does not fit a {}x{} view",
                        cam.width(),
                        cam.height()
                    )));
                }
            }
        }
        let mut pixel_offsets = vec![0];
        for img in &images {
            pixel_offsets.push(pixel_offsets.last().unwrap() + img.width() * img.height());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let grid = config
            .occupancy
            .then(|| OccupancyGrid::full(model.bbox, config.occupancy_resolution));
        Ok(Self {
            optimizer: AdamW::new(&model.params),
            settings: RenderSettings {
                samples: config.samples_per_ray,
                near: config.near,
                far: config.far,
            },
            model,
            config,
            anchors,
            grid,
            cameras,
            images,
            pixel_offsets,
            rng,
            threads: 1,
        })
    }

    /// Worker count for the gradient tasks of a step. Results do not
    /// depend on it.
    pub fn set_threads(&mut self, threads: usize) {
        self.threads = threads.max(1);
    }

    pub fn settings(&self) -> &RenderSettings {
        &self.settings
    }

    fn random_pixel(&mut self) -> (usize, usize, usize) {
        let total = *self.pixel_offsets.last().unwrap();
        let k = self.rng.random_range(0..total);
        let view = self.pixel_offsets.partition_point(|&o| o <= k) - 1;
        let local = k - self.pixel_offsets[view];
        let w = self.images[view].width();
        (view, local % w, local / w)
    }

    fn patch_camera(&mut self) -> Result<Camera> {
        let n = self.cameras.len();
        let a = self.rng.random_range(0..n);
        if self.rng.random::<f64>() < self.config.patch_interpolated_fraction {
            let b = (a + self.rng.random_range(1..n)) % n;
            let s = self.rng.random::<f64>();
            let ca = &self.cameras[a];
            let ext = ca.extrinsics.interpolate(&self.cameras[b].extrinsics, s)?;
            return Ok(Camera::new(ca.intrinsics, ext));
        }
        Ok(self.cameras[a])
    }

    fn plan(&mut self, stage: Stage) -> Result<Vec<Task>> {
        let (l1, l2) = self.config.loss_weights.lambdas(stage);
        let batch = self.config.ray_batch;
        let picks: Vec<_> = (0..batch).map(|_| self.random_pixel()).collect();
        let mut tasks = Vec::new();
        for chunk in picks.chunks(self.config.rays_per_task) {
            let mut rays = Vec::with_capacity(chunk.len());
            let mut gt = Vec::with_capacity(3 * chunk.len());
            for &(view, x, y) in chunk {
                rays.push(RayQuery::through_pixel(&self.cameras[view], x as f64 + 0.5, y as f64 + 0.5));
                gt.extend(self.images[view].pixel(x, y));
            }
            tasks.push(Task::Color {
                gt: Tensor::matrix(chunk.len(), 3, gt)?,
                rays,
                scale: chunk.len() as f64 / batch as f64,
            });
        }
        if l1 != 0.0 {
            let n = self.config.anchors_per_iter.min(self.anchors.len());
            let idx = sample_indices(&mut self.rng, self.anchors.len(), n);
            let mut rays = Vec::with_capacity(n);
            let mut factor = Vec::with_capacity(n);
            let mut target = Vec::with_capacity(n);
            let mut weight = Vec::with_capacity(n);
            for i in idx.iter() {
                let a = &self.anchors[i];
                let cam = &self.cameras[a.view];
                let ray = RayQuery::through_pixel(cam, a.u, a.v);
                factor.push(cam.depth_per_unit_t(&ray.direction));
                rays.push(ray);
                target.push(a.depth);
                weight.push(a.weight);
            }
            tasks.push(Task::Depth {
                rays,
                factor,
                target,
                weight,
                scale: l1,
            });
        }
        if l2 != 0.0 {
            let camera = self.patch_camera()?;
            let (size, stride) = (self.config.patch_size, self.config.patch_stride);
            let range = |len| {
                PatchSpec::center_range(size, stride, len)
                    .ok_or_else(|| Error::invalid("patch footprint does not fit the view"))
            };
            let (x0, x1) = range(camera.width())?;
            let (y0, y1) = range(camera.height())?;
            let center = (self.rng.random_range(x0..=x1), self.rng.random_range(y0..=y1));
            tasks.push(Task::Patch {
                camera,
                spec: PatchSpec { center, size, stride },
                scale: l2,
            });
        }
        Ok(tasks)
    }

    fn run_task(&self, task: &Task, seed: u64) -> Result<TaskOutput> {
        let model = &self.model;
        let grid = self.grid.as_ref();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape)?;
        let (loss, scale) = match task {
            Task::Color { rays, gt, scale } => {
                let br = render_rays(model, &mut tape, &bound, rays, &self.settings, grid, Some(&mut rng), Shading::Full)?;
                let rgb = tape.slice_cols(br.output, 0, 3)?;
                (color_loss(&mut tape, rgb, gt)?, *scale)
            }
            Task::Depth {
                rays,
                factor,
                target,
                weight,
                scale,
            } => {
                let br = render_rays(
                    model,
                    &mut tape,
                    &bound,
                    rays,
                    &self.settings,
                    grid,
                    Some(&mut rng),
                    Shading::DensityOnly,
                )?;
                let t = tape.slice_cols(br.output, crate::render::rays::COL_DEPTH, crate::render::rays::COL_DEPTH + 1)?;
                let f = tape.constant(Tensor::matrix(factor.len(), 1, factor.clone())?)?;
                let z = tape.mul(t, f)?;
                (depth_loss(&mut tape, z, target, weight)?, *scale)
            }
            Task::Patch { camera, spec, scale } => {
                let p = render_patch(model, &mut tape, &bound, camera, spec, &self.settings, grid, Some(&mut rng))?;
                let rgb = tape.value(p.rgb).data().to_vec();
                (smoothness_loss(&mut tape, p.disparity, &rgb, spec.size)?, *scale)
            }
        };
        let value = tape.value(loss).item()?;
        let scaled = tape.scale(loss, scale)?;
        let grads = tape.backward(scaled)?;
        Ok(TaskOutput { value, grads })
    }

    fn run_tasks(&self, tasks: &[Task], seeds: &[u64]) -> Result<Vec<TaskOutput>> {
        let threads = self.threads.min(tasks.len()).max(1);
        if threads == 1 {
            return tasks.iter().zip(seeds).map(|(t, &s)| self.run_task(t, s)).collect();
        }
        let mut slots: Vec<Option<Result<TaskOutput>>> = (0..tasks.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    scope.spawn(move || {
                        (w..tasks.len())
                            .step_by(threads)
                            .map(|i| (i, self.run_task(&tasks[i], seeds[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("training worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every task ran")).collect()
    }

    /// One optimization step at iteration `iter`.
    pub fn step(&mut self, iter: usize) -> Result<LossReport> {
        if self.config.occupancy && iter > 0 && iter % self.config.occupancy_every == 0 {
            self.grid = Some(occupancy_grid_update(
                &self.model,
                self.config.occupancy_resolution,
                self.config.occupancy_threshold,
            )?);
        }
        let stage = Stage::at(iter, self.config.depth_stage_iters());
        let tasks = self.plan(stage)?;
        let seeds: Vec<u64> = tasks.iter().map(|_| self.rng.random()).collect();
        let outputs = self.run_tasks(&tasks, &seeds)?;

        let (mut color, mut depth, mut smooth) = (0.0, 0.0, 0.0);
        let mut grads = Gradients::new();
        for (task, out) in tasks.iter().zip(&outputs) {
            match task {
                Task::Color { scale, .. } => color += scale * out.value,
                Task::Depth { .. } => depth = out.value,
                Task::Patch { .. } => smooth = out.value,
            }
            grads.merge(&out.grads)?;
        }
        let report = total_loss(color, depth, smooth, stage, &self.config.loss_weights);
        if !report.total.is_finite() {
            return Err(Error::NonFinite { op: "training loss" });
        }
        let (lr, plane_lr) = (self.config.learning_rate, self.config.plane_learning_rate);
        let plane_group = "triplane";
        self.optimizer.step(
            &mut self.model.params,
            &grads,
            |p| if p.group == plane_group { plane_lr } else { lr },
            self.config.weight_decay,
        )?;
        Ok(report)
    }
}

/// Result of a full run.
pub struct TrainOutcome {
    pub model: TriDF,
    pub log: Vec<LogRow>,
    pub anchors: Vec<KeypointAnchor>,
    pub grid: Option<OccupancyGrid>,
}

/// Where and how a run reports.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions<'a> {
    /// Directory for the checkpoint and metrics log.
    pub out_dir: Option<&'a Path>,
    pub threads: usize,
}

fn write_outputs(dir: &Path, model: &TriDF, config: &TrainConfig, iter: usize, log: &[LogRow]) -> Result<()> {
    let meta = serde_json::json!({ "iter": iter, "config": config });
    save_checkpoint(&dir.join(CHECKPOINT_FILE), model, &meta)?;
    let path = dir.join(METRICS_FILE);
    std::fs::write(&path, metrics_csv(log)).map_err(|e| Error::io(&path, e))
}

/// Runs `config.total_iters` steps, evaluating on the test views
/// periodically and, with an output directory, checkpointing as it goes.
/// `on_row` sees every log row as it is produced.
pub fn train(
    scene: &SceneDataset,
    cloud: Option<&PointCloud>,
    config: &TrainConfig,
    options: RunOptions<'_>,
    mut on_row: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let mut trainer = Trainer::new(scene, cloud, config.clone())?;
    trainer.set_threads(options.threads);
    if let Some(dir) = options.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let total = config.total_iters;
    let mut log = Vec::with_capacity(total);
    for iter in 0..total {
        let report = trainer.step(iter)?;
        let done = iter + 1;
        let eval_now = done == total || (config.eval_every > 0 && done % config.eval_every == 0);
        let metrics = if eval_now && !scene.test_ids.is_empty() {
            let m = evaluate(
                &trainer.model,
                scene,
                &scene.test_ids,
                trainer.settings(),
                trainer.grid.as_ref(),
                options.threads.max(1),
            )?;
            mean_metrics(&m)
        } else {
            None
        };
        let row = LogRow {
            iter,
            report,
            psnr_test: metrics.map(|m| m.0),
            ssim_test: metrics.map(|m| m.1),
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        on_row(&row);
        log.push(row);
        if let Some(dir) = options.out_dir {
            if done < total && config.checkpoint_every > 0 && done % config.checkpoint_every == 0 {
                write_outputs(dir, &trainer.model, config, done, &log)?;
            }
        }
    }
    if let Some(dir) = options.out_dir {
        write_outputs(dir, &trainer.model, config, total, &log)?;
    }
    Ok(TrainOutcome {
        model: trainer.model,
        log,
        anchors: trainer.anchors,
        grid: trainer.grid,
    })
}
