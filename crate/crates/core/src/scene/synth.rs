//! Procedural test scenes: a textured ground square with boxes on it, seen
//! from an oblique arc of cameras, rendered by exact ray tracing.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{Aabb, Camera, Extrinsics, Intrinsics, Vec3};
use crate::error::{Error, Result};
use crate::scene::dataset::{SceneDataset, DEFAULT_BACKGROUND};
use crate::scene::image::Image;
use crate::scene::pointcloud::PointCloud;

pub const MIN_RESOLUTION: usize = 16;
pub const MAX_RESOLUTION: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_views: usize,
    pub resolution: usize,
    /// Half side length of the ground square, in world units.
    pub scale: f64,
    pub n_points: usize,
    /// Fraction of cloud points whose color gets uniform noise.
    pub noise_fraction: f64,
    pub noise_amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_views: 4,
            resolution: 64,
            scale: 10.0,
            n_points: 1000,
            noise_fraction: 0.2,
            noise_amplitude: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTexture {
    pub base: [f64; 3],
    pub amplitude: [f64; 3],
    pub wavelength: [f64; 2],
    pub phase: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TexturedBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub color: [f64; 3],
    pub wavelength: f64,
}

/// Where a cloud point was sampled: view index and integer pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudSource {
    pub view: usize,
    pub u: usize,
    pub v: usize,
}

/// Analytic scene description plus the per-view ground truth it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub ground_half: f64,
    pub ground: GroundTexture,
    pub boxes: Vec<TexturedBox>,
    /// Unit light direction for Lambertian shading.
    pub light: [f64; 3],
    pub background: [f64; 3],
    /// Depth reported for rays that miss everything.
    pub t_far: f64,
    #[serde(skip)]
    pub depth_maps: Vec<Vec<f64>>,
    #[serde(skip)]
    pub cloud_sources: Vec<CloudSource>,
}

/// Nearest surface intersection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    pub color: [f64; 3],
}

impl SyntheticScene {
    fn shade(&self, normal: &Vec3) -> f64 {
        let l = Vec3::from(self.light);
        0.35 + 0.65 * normal.dot(&l).max(0.0)
    }

    fn ground_color(&self, p: &Vec3) -> [f64; 3] {
        let g = &self.ground;
        let sx = 2.0 * PI * p.x / g.wavelength[0];
        let sy = 2.0 * PI * p.y / g.wavelength[1];
        let shade = self.shade(&Vec3::z());
        let mut c = [0.0; 3];
        for k in 0..3 {
            let pattern = 0.5 * (sx + g.phase[k]).sin() + 0.5 * (sy - g.phase[k]).cos();
            c[k] = ((g.base[k] + g.amplitude[k] * pattern) * shade).clamp(0.0, 1.0);
        }
        c
    }

    fn box_color(&self, b: &TexturedBox, p: &Vec3, axis: usize, normal: &Vec3) -> [f64; 3] {
        let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
        let w = 2.0 * PI / b.wavelength;
        let pattern = 0.85 + 0.15 * (w * p[a1]).sin() * (w * p[a2]).sin();
        let shade = self.shade(normal);
        b.color.map(|c| (c * pattern * shade).clamp(0.0, 1.0))
    }

    /// Closest hit along `origin + t * dir` for `t > 0`.
    pub fn trace(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut keep = |hit: Hit| {
            if best.is_none_or(|b| hit.t < b.t) {
                best = Some(hit);
            }
        };

        if dir.z.abs() > 1e-12 {
            let t = -origin.z / dir.z;
            if t > 0.0 {
                let mut p = origin + dir * t;
                p.z = 0.0;
                if p.x.abs() <= self.ground_half && p.y.abs() <= self.ground_half {
                    keep(Hit {
                        t,
                        point: p,
                        color: self.ground_color(&p),
                    });
                }
            }
        }

        for b in &self.boxes {
            let (lo, hi) = (Vec3::from(b.min), Vec3::from(b.max));
            let mut t0 = f64::NEG_INFINITY;
            let mut t1 = f64::INFINITY;
            let mut axis = 0;
            let mut missed = false;
            for k in 0..3 {
                if dir[k].abs() < 1e-15 {
                    if origin[k] < lo[k] || origin[k] > hi[k] {
                        missed = true;
                        break;
                    }
                    continue;
                }
                let ta = (lo[k] - origin[k]) / dir[k];
                let tb = (hi[k] - origin[k]) / dir[k];
                let (near, far) = if ta < tb { (ta, tb) } else { (tb, ta) };
                if near > t0 {
                    t0 = near;
                    axis = k;
                }
                t1 = t1.min(far);
            }
            if missed || t0 > t1 || t0 <= 0.0 {
                continue;
            }
            let mut normal = Vec3::zeros();
            normal[axis] = -dir[axis].signum();
            let mut p = origin + dir * t0;
            // Snap onto the face plane so texture lookups are exact.
            p[axis] = if normal[axis] < 0.0 { lo[axis] } else { hi[axis] };
            keep(Hit {
                t: t0,
                point: p,
                color: self.box_color(b, &p, axis, &normal),
            });
        }
        best
    }
}

/// Exact color and camera-space depth at every pixel center of `cam`.
/// Rays that miss get the background color and depth `t_far`.
pub fn oracle_render(scene: &SyntheticScene, cam: &Camera) -> (Image, Vec<f64>) {
    let (w, h) = (cam.width(), cam.height());
    let mut img = Image::filled(w, h, scene.background);
    let mut depth = vec![scene.t_far; w * h];
    for v in 0..h {
        for u in 0..w {
            let (o, d) = cam.ray_through(u as f64 + 0.5, v as f64 + 0.5);
            if let Some(hit) = scene.trace(&o, &d) {
                img.set_pixel(u, v, hit.color);
                depth[v * w + u] = cam.extrinsics.world_to_camera(&hit.point).z;
            }
        }
    }
    (img, depth)
}

/// Indices of the three training views, spread evenly over `0..n`.
pub fn train_split(n: usize) -> (Vec<usize>, Vec<usize>) {
    let train: Vec<usize> = (0..3)
        .map(|i| ((i * (n - 1)) as f64 / 2.0).round() as usize)
        .collect();
    let test = (0..n).filter(|i| !train.contains(i)).collect();
    (train, test)
}

fn uniform3(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    ]
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&self.resolution) {
            return Err(Error::invalid(format!(
                "resolution must be in [{MIN_RESOLUTION}, {MAX_RESOLUTION}], got {}",
                self.resolution
            )));
        }
        if self.n_views < 4 {
            return Err(Error::invalid(format!("need at least 4 views, got {}", self.n_views)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid("scale must be positive"));
        }
        if self.n_points == 0 || !(0.0..=1.0).contains(&self.noise_fraction) || self.noise_amplitude < 0.0 {
            return Err(Error::invalid("invalid point cloud settings"));
        }
        Ok(())
    }
}

/// Builds a scene, its views, split and a noisy colored point cloud sampled
/// from visible surfaces of the training views. Deterministic in `cfg.seed`.
pub fn synth_scene(cfg: &SynthConfig) -> Result<(SceneDataset, PointCloud, SyntheticScene)> {
    cfg.validate()?;
    let g = cfg.scale;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let ground = GroundTexture {
        base: uniform3(&mut rng, 0.35, 0.6),
        amplitude: uniform3(&mut rng, 0.12, 0.25),
        wavelength: [rng.random_range(0.6..1.0) * g, rng.random_range(0.6..1.0) * g],
        phase: uniform3(&mut rng, 0.0, 2.0 * PI),
    };
    let n_boxes = rng.random_range(3..=8);
    let boxes = (0..n_boxes)
        .map(|_| {
            let cx = rng.random_range(-0.65..0.65) * g;
            let cy = rng.random_range(-0.65..0.65) * g;
            let hx = rng.random_range(0.08..0.2) * g;
            let hy = rng.random_range(0.08..0.2) * g;
            let height = rng.random_range(0.1..0.45) * g;
            TexturedBox {
                min: [cx - hx, cy - hy, 0.0],
                max: [cx + hx, cy + hy, height],
                color: uniform3(&mut rng, 0.15, 0.9),
                wavelength: rng.random_range(0.3..0.5) * g,
            }
        })
        .collect();
    let light = Vec3::new(0.3, 0.5, 0.8).normalize();

    let distance = 3.2 * g;
    let elevation = 60f64.to_radians();
    let az0 = rng.random_range(0.0..2.0 * PI);
    let arc = PI / 2.0;
    let res = cfg.resolution;
    let focal = 2.0 * res as f64;
    let k = Intrinsics::new(focal, focal, res as f64 / 2.0, res as f64 / 2.0, res, res)?;
    let cameras = (0..cfg.n_views)
        .map(|i| {
            let az = az0 + arc * i as f64 / (cfg.n_views - 1) as f64;
            let eye = Vec3::new(
                elevation.cos() * az.cos(),
                elevation.cos() * az.sin(),
                elevation.sin(),
            ) * distance;
            Ok(Camera::new(k, Extrinsics::look_at(eye, Vec3::zeros(), Vec3::z())?))
        })
        .collect::<Result<Vec<_>>>()?;

    // The ground covers every view's footprint so no pixel sees past it.
    let mut footprint = g;
    for cam in &cameras {
        for (u, v) in [(0.0, 0.0), (res as f64, 0.0), (0.0, res as f64), (res as f64, res as f64)] {
            let (o, d) = cam.ray_through(u, v);
            if d.z >= 0.0 {
                return Err(Error::invalid("synthetic view looks above the horizon"));
            }
            let p = o - d * (o.z / d.z);
            footprint = footprint.max(p.x.abs()).max(p.y.abs());
        }
    }
    let ground_half = 1.02 * footprint;

    let mut scene = SyntheticScene {
        ground_half,
        ground,
        boxes,
        light: light.into(),
        background: DEFAULT_BACKGROUND,
        t_far: distance + 2.0 * ground_half,
        depth_maps: Vec::new(),
        cloud_sources: Vec::new(),
    };
    let mut images = Vec::with_capacity(cfg.n_views);
    for cam in &cameras {
        let (img, depth) = oracle_render(&scene, cam);
        images.push(img.quantized());
        scene.depth_maps.push(depth);
    }

    let (train_ids, test_ids) = train_split(cfg.n_views);
    let bbox = Aabb::new(
        Vec3::new(-ground_half, -ground_half, -0.05 * g),
        Vec3::new(ground_half, ground_half, 0.55 * g),
    )?;
    let dataset = SceneDataset::new(cameras, images, train_ids.clone(), test_ids, bbox, scene.background)?;

    let mut points = Vec::with_capacity(cfg.n_points);
    let mut colors = Vec::with_capacity(cfg.n_points);
    let mut attempts = 0;
    while points.len() < cfg.n_points && attempts < 50 * cfg.n_points {
        let view = train_ids[attempts % train_ids.len()];
        attempts += 1;
        let u = rng.random_range(0..res);
        let v = rng.random_range(0..res);
        let cam = &dataset.cameras[view];
        let (o, d) = cam.ray_through(u as f64 + 0.5, v as f64 + 0.5);
        let Some(hit) = scene.trace(&o, &d) else {
            continue;
        };
        let mut c = hit.color;
        if rng.random::<f64>() < cfg.noise_fraction {
            for ch in &mut c {
                *ch += rng.random_range(-1.0..=1.0) * cfg.noise_amplitude;
            }
        }
        colors.push(c.map(|x| (255.0 * x.clamp(0.0, 1.0)).round() / 255.0));
        points.push(hit.point);
        scene.cloud_sources.push(CloudSource { view, u, v });
    }
    let cloud = PointCloud::new(points, colors)?;
    Ok((dataset, cloud, scene))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_scene() -> SyntheticScene {
        SyntheticScene {
            ground_half: 10.0,
            ground: GroundTexture {
                base: [0.5; 3],
                amplitude: [0.0; 3],
                wavelength: [1.0, 1.0],
                phase: [0.0; 3],
            },
            boxes: vec![TexturedBox {
                min: [2.0, 2.0, 0.0],
                max: [3.0, 3.0, 1.5],
                color: [0.4, 0.6, 0.8],
                wavelength: 0.5,
            }],
            light: [0.0, 0.0, 1.0],
            background: DEFAULT_BACKGROUND,
            t_far: 100.0,
            depth_maps: Vec::new(),
            cloud_sources: Vec::new(),
        }
    }

    fn nadir_camera(eye: Vec3, size: usize) -> Camera {
        let k = Intrinsics::new(10.0, 10.0, size as f64 / 2.0, size as f64 / 2.0, size, size).unwrap();
        let e = Extrinsics::look_at(eye, Vec3::new(eye.x, eye.y, 0.0), Vec3::y()).unwrap();
        Camera::new(k, e)
    }

    #[test]
    fn ground_hit_from_above_has_depth_five() {
        let s = flat_scene();
        let hit = s.trace(&Vec3::new(0.0, 0.0, 5.0), &Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(hit.t, 5.0);
        // Nadir camera with an odd-sized image so a pixel center lies on the axis.
        let cam = nadir_camera(Vec3::new(0.0, 0.0, 5.0), 3);
        let (_, depth) = oracle_render(&s, &cam);
        assert!((depth[4] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn missed_rays_get_background() {
        let s = flat_scene();
        let cam = nadir_camera(Vec3::new(0.0, 0.0, 5.0), 3);
        let k = cam.intrinsics;
        let up = Camera::new(
            k,
            Extrinsics::look_at(Vec3::new(0.0, 0.0, 5.0), Vec3::new(0.0, 0.0, 9.0), Vec3::y()).unwrap(),
        );
        let (img, depth) = oracle_render(&s, &up);
        assert!(depth.iter().all(|&d| d == s.t_far));
        assert_eq!(img.pixel(1, 1), DEFAULT_BACKGROUND);
    }

    #[test]
    fn box_top_depth_is_analytic() {
        let s = flat_scene();
        let eye = Vec3::new(2.5, 2.5, 7.25);
        let cam = nadir_camera(eye, 3);
        let (img, depth) = oracle_render(&s, &cam);
        assert!((depth[4] - (7.25 - 1.5)).abs() < 1e-12);
        assert_ne!(img.pixel(1, 1), img.pixel(0, 0));
        // Side face seen head-on.
        let hit = s.trace(&Vec3::new(-1.0, 2.5, 0.75), &Vec3::x()).unwrap();
        assert!((hit.t - 3.0).abs() < 1e-12);
        assert_eq!(hit.point, Vec3::new(2.0, 2.5, 0.75));
    }

    #[test]
    fn resolution_and_view_bounds() {
        let mut cfg = SynthConfig {
            resolution: 1024,
            ..SynthConfig::default()
        };
        assert!(synth_scene(&cfg).is_err());
        cfg.resolution = 15;
        assert!(synth_scene(&cfg).is_err());
        cfg.resolution = 16;
        cfg.n_views = 3;
        assert!(synth_scene(&cfg).is_err());
    }

    #[test]
    fn split_rule() {
        assert_eq!(train_split(4), (vec![0, 2, 3], vec![1]));
        assert_eq!(train_split(5), (vec![0, 2, 4], vec![1, 3]));
    }
}
