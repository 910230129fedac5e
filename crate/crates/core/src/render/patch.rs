//! Strided square patches for the disparity smoothness term.

use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::field::TriDF;
use crate::math::{Tape, Tensor, Var};
use crate::render::occupancy::OccupancyGrid;
use crate::render::rays::{render_rays, RayQuery, RenderSettings, Shading, COL_DEPTH};

pub const DISPARITY_EPS: f64 = 1e-6;

/// Pixel footprint of a patch: `size` samples `stride` pixels apart,
/// centered on `center`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSpec {
    pub center: (usize, usize),
    pub size: usize,
    pub stride: usize,
}

impl PatchSpec {
    /// Side length of the footprint in pixels.
    pub fn footprint(&self) -> usize {
        (self.size - 1) * self.stride + 1
    }

    /// Top-left pixel of the footprint.
    pub fn origin(&self) -> Option<(usize, usize)> {
        let half = (self.size - 1) * self.stride / 2;
        Some((self.center.0.checked_sub(half)?, self.center.1.checked_sub(half)?))
    }

    /// Pixels in row-major order, or an error if the footprint leaves the image.
    pub fn pixels(&self, width: usize, height: usize) -> Result<Vec<(usize, usize)>> {
        if self.size < 2 || self.stride == 0 {
            return Err(Error::invalid("patch needs size >= 2 and stride >= 1"));
        }
        let f = self.footprint();
        let ok = self
            .origin()
            .filter(|&(x0, y0)| x0 + f <= width && y0 + f <= height);
        let Some((x0, y0)) = ok else {
            return Err(Error::invalid(format!(
                "{f}x{f} patch around {:?} leaves the {width}x{height} image",
                self.center
            )));
        };
        Ok((0..self.size)
            .flat_map(|j| (0..self.size).map(move |i| (x0 + i * self.stride, y0 + j * self.stride)))
            .collect())
    }

    /// Range of valid centers along an axis of length `len`.
    pub fn center_range(size: usize, stride: usize, len: usize) -> Option<(usize, usize)> {
        let f = (size - 1) * stride + 1;
        let half = (size - 1) * stride / 2;
        (f <= len).then(|| (half, len - f + half))
    }
}

/// Rendered patch on the tape.
#[derive(Clone, Copy, Debug)]
pub struct PatchRender {
    /// `[size^2, 3]` colors, row-major over the patch.
    pub rgb: Var,
    /// `[size^2, 1]` disparity `1 / (depth + eps)` divided by its mean.
    pub disparity: Var,
}

pub fn render_patch(
    model: &TriDF,
    tape: &mut Tape,
    bound: &[Var],
    cam: &Camera,
    spec: &PatchSpec,
    settings: &RenderSettings,
    grid: Option<&OccupancyGrid>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<PatchRender> {
    let pixels = spec.pixels(cam.width(), cam.height())?;
    let rays: Vec<RayQuery> = pixels
        .iter()
        .map(|&(u, v)| RayQuery::through_pixel(cam, u as f64 + 0.5, v as f64 + 0.5))
        .collect();
    let br = render_rays(model, tape, bound, &rays, settings, grid, rng, Shading::Full)?;
    let rgb = tape.slice_cols(br.output, 0, 3)?;
    let depth = tape.slice_cols(br.output, COL_DEPTH, COL_DEPTH + 1)?;
    let d = tape.add_scalar(depth, DISPARITY_EPS)?;
    let disp = tape.recip(d)?;
    let mean = tape.mean(disp)?;
    let inv_mean = tape.recip(mean)?;
    let disparity = tape.mul_scalar_var(disp, inv_mean)?;
    Ok(PatchRender { rgb, disparity })
}

/// Normalized disparity of plain depth values, as in [`render_patch`].
pub fn normalized_disparity(depth: &[f64]) -> Tensor {
    let disp: Vec<f64> = depth.iter().map(|d| 1.0 / (d + DISPARITY_EPS)).collect();
    let mean = disp.iter().sum::<f64>() / disp.len() as f64;
    Tensor::matrix(disp.len(), 1, disp.iter().map(|d| d * (1.0 / mean)).collect()).expect("sized")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn footprint_of_default_patch() {
        let p = PatchSpec {
            center: (32, 32),
            size: 16,
            stride: 4,
        };
        assert_eq!(p.footprint(), 61);
        let px = p.pixels(64, 64).unwrap();
        assert_eq!(px.len(), 256);
        assert_eq!(px[0], (2, 2));
        assert_eq!(px[255], (62, 62));
        assert!(p.pixels(60, 64).is_err());
        assert_eq!(PatchSpec::center_range(16, 4, 64), Some((30, 33)));
        let edge = PatchSpec { center: (29, 32), ..p };
        assert!(edge.pixels(64, 64).is_err());
    }

    #[test]
    fn constant_depth_gives_unit_disparity() {
        let d = normalized_disparity(&[3.7; 16]);
        assert!(d.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }
}
