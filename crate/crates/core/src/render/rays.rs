//! Batched differentiable rendering of rays through the field.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Vec3};
use crate::error::{Error, Result};
use crate::field::TriDF;
use crate::math::{Tape, Tensor, Var};
use crate::render::occupancy::OccupancyGrid;
use crate::render::sampling::stratified_sample;
use crate::scene::Image;

/// Column layout of a rendered batch.
pub const COL_DEPTH: usize = 3;
pub const COL_OPACITY: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub samples: usize,
    /// Global clamp on the per-ray interval from the bbox.
    pub near: f64,
    pub far: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            samples: 64,
            near: 1e-3,
            far: 1e6,
        }
    }
}

/// Whether to evaluate the color branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shading {
    Full,
    /// Densities only; colors are zero. Enough for depth.
    DensityOnly,
}

/// A ray as origin and unit direction; the bbox supplies the interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayQuery {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl RayQuery {
    pub fn through_pixel(cam: &Camera, u: f64, v: f64) -> Self {
        let (origin, direction) = cam.ray_through(u, v);
        Self { origin, direction }
    }
}

/// Output of [`render_rays`].
#[derive(Clone, Debug)]
pub struct BatchRender {
    /// `[rays, 5]`: r, g, b, depth (ray distance), opacity.
    pub output: Var,
    /// Field evaluations spent on each ray.
    pub field_evals: Vec<usize>,
    /// Ray interval inside the bbox, if the ray hits it.
    pub bounds: Vec<Option<(f64, f64)>>,
}

/// Samples each ray inside the bbox, evaluates the field at samples that
/// are inside the box (and occupied, when a grid is given), and composites.
/// Skipped samples have zero density. With `rng` the samples are jittered.
#[allow(clippy::too_many_arguments)]
pub fn render_rays(
    model: &TriDF,
    tape: &mut Tape,
    bound: &[Var],
    rays: &[RayQuery],
    settings: &RenderSettings,
    grid: Option<&OccupancyGrid>,
    mut rng: Option<&mut ChaCha8Rng>,
    shading: Shading,
) -> Result<BatchRender> {
    let n = settings.samples;
    if rays.is_empty() {
        return Err(Error::invalid("no rays to render"));
    }
    let total = rays.len() * n;
    let mut ts = Vec::with_capacity(total);
    let mut deltas = Vec::with_capacity(total);
    let mut active = Vec::new();
    let mut points = Vec::new();
    let mut dirs = Vec::new();
    let mut field_evals = vec![0; rays.len()];
    let mut bounds = Vec::with_capacity(rays.len());

    for (r, ray) in rays.iter().enumerate() {
        let b = model
            .bbox
            .ray_bounds(&ray.origin, &ray.direction, settings.near, settings.far);
        bounds.push(b);
        let Some((t0, t1)) = b else {
            // Misses the box: only background.
            ts.extend((0..n).map(|i| (i + 1) as f64));
            deltas.extend(std::iter::repeat_n(1.0, n));
            continue;
        };
        let s = stratified_sample(t0, t1, n, rng.as_deref_mut())?;
        for (i, &t) in s.t.iter().enumerate() {
            let x = ray.origin + ray.direction * t;
            let inside = model.bbox.normalize(&x).iter().all(|c| c.abs() <= 1.0 + 1e-9);
            if inside && grid.is_none_or(|g| g.is_occupied(&x)) {
                active.push(r * n + i);
                points.push(x);
                dirs.push(ray.direction);
                field_evals[r] += 1;
            }
        }
        ts.extend_from_slice(&s.t);
        deltas.extend_from_slice(&s.deltas);
    }

    let (sigma, rgb) = if active.is_empty() {
        (
            tape.constant(Tensor::zeros(&[total, 1]))?,
            tape.constant(Tensor::zeros(&[total, 3]))?,
        )
    } else {
        let (sigma, rgb) = match shading {
            Shading::Full => model.field(tape, bound, &points, &dirs)?,
            Shading::DensityOnly => {
                let inputs = model.density_inputs(&points)?;
                let enc = tape.constant(inputs.encoded)?;
                let (sigma, _) = model.density_field(tape, bound, enc)?;
                let rgb = tape.constant(Tensor::zeros(&[points.len(), 3]))?;
                (sigma, rgb)
            }
        };
        (
            tape.scatter_rows(sigma, &active, total)?,
            tape.scatter_rows(rgb, &active, total)?,
        )
    };
    let output = tape.composite(sigma, rgb, n, deltas, ts, model.background)?;
    Ok(BatchRender {
        output,
        field_evals,
        bounds,
    })
}

/// Plain values of one rendered ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayResult {
    pub color: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub field_evals: usize,
}

const EVAL_CHUNK: usize = 256;

fn eval_chunk(model: &TriDF, rays: &[RayQuery], settings: &RenderSettings, grid: Option<&OccupancyGrid>) -> Result<Vec<RayResult>> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape)?;
    let br = render_rays(model, &mut tape, &bound, rays, settings, grid, None, Shading::Full)?;
    let out = tape.value(br.output);
    Ok((0..rays.len())
        .map(|r| {
            let row = out.row(r);
            RayResult {
                color: [row[0], row[1], row[2]],
                depth: row[COL_DEPTH],
                opacity: row[COL_OPACITY],
                field_evals: br.field_evals[r],
            }
        })
        .collect())
}

/// Deterministic (midpoint-sampled) rendering of many rays, split into
/// fixed chunks spread over `threads` workers. Results do not depend on the
/// thread count.
pub fn render_rays_eval(
    model: &TriDF,
    rays: &[RayQuery],
    settings: &RenderSettings,
    grid: Option<&OccupancyGrid>,
    threads: usize,
) -> Result<Vec<RayResult>> {
    let chunks: Vec<&[RayQuery]> = rays.chunks(EVAL_CHUNK).collect();
    let threads = threads.max(1).min(chunks.len().max(1));
    if threads == 1 {
        let mut out = Vec::with_capacity(rays.len());
        for c in chunks {
            out.extend(eval_chunk(model, c, settings, grid)?);
        }
        return Ok(out);
    }
    let per = chunks.len().div_ceil(threads);
    let parts: Vec<Result<Vec<RayResult>>> = std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .chunks(per)
            .map(|group| {
                s.spawn(move || {
                    let mut out = Vec::new();
                    for c in group {
                        out.extend(eval_chunk(model, c, settings, grid)?);
                    }
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("render worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(rays.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// A rendered camera view.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub image: Image,
    /// Expected ray distance per pixel.
    pub depth: Vec<f64>,
    pub opacity: Vec<f64>,
    pub field_evals: usize,
}

pub fn render_view(
    model: &TriDF,
    cam: &Camera,
    settings: &RenderSettings,
    grid: Option<&OccupancyGrid>,
    threads: usize,
) -> Result<RenderedView> {
    let (w, h) = (cam.width(), cam.height());
    let rays: Vec<RayQuery> = (0..h)
        .flat_map(|v| (0..w).map(move |u| (u, v)))
        .map(|(u, v)| RayQuery::through_pixel(cam, u as f64 + 0.5, v as f64 + 0.5))
        .collect();
    let res = render_rays_eval(model, &rays, settings, grid, threads)?;
    let image = Image::new(w, h, res.iter().flat_map(|r| r.color).collect())?;
    Ok(RenderedView {
        image,
        depth: res.iter().map(|r| r.depth).collect(),
        opacity: res.iter().map(|r| r.opacity).collect(),
        field_evals: res.iter().map(|r| r.field_evals).sum(),
    })
}
