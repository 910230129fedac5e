//! Three axis-aligned learnable feature planes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{ParamId, ParamStore, Tape, Tensor, Var};

/// Coordinate pairs indexing the XY, YZ and ZX planes (texel column axis
/// first).
pub const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triplane {
    pub resolution: usize,
    pub channels: usize,
    /// Plane tensors `[resolution^2, channels]` in XY, YZ, ZX order.
    pub planes: [ParamId; 3],
}

impl Triplane {
    /// Planes filled uniformly in `+-init_range`.
    pub fn new(
        store: &mut ParamStore,
        resolution: usize,
        channels: usize,
        init_range: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let names = ["triplane.xy", "triplane.yz", "triplane.zx"];
        let planes = names.map(|name| {
            let data = (0..resolution * resolution * channels)
                .map(|_| {
                    if init_range > 0.0 {
                        rng.random_range(-init_range..init_range)
                    } else {
                        0.0
                    }
                })
                .collect();
            let t = Tensor::matrix(resolution * resolution, channels, data).expect("sized");
            store.add(name, "triplane", false, t)
        });
        Self {
            resolution,
            channels,
            planes,
        }
    }

    pub fn feature_dim(&self) -> usize {
        3 * self.channels
    }

    /// Texel-space coordinate of a normalized coordinate: `-1` maps to texel
    /// 0 and `+1` to texel `resolution - 1`.
    pub fn to_texel(&self, x: f64) -> f64 {
        (x + 1.0) * 0.5 * (self.resolution - 1) as f64
    }

    /// Samples all three planes at normalized points `x_norm` (`[n, 3]`,
    /// entries in `[-1, 1]`) and concatenates the features in XY, YZ, ZX
    /// order. Differentiable with respect to the planes and `x_norm`.
    pub fn sample(&self, tape: &mut Tape, bound: &[Var], x_norm: Var) -> Result<Var> {
        let t = tape.value(x_norm);
        if t.shape().len() != 2 || t.cols() != 3 {
            return Err(Error::shape("triplane_sample", format!("points {:?}", t.shape())));
        }
        if let Some(v) = t.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!(
                "normalized coordinate {v} outside [-1, 1]"
            )));
        }
        let half = 0.5 * (self.resolution - 1) as f64;
        let texel = tape.add_scalar(x_norm, 1.0)?;
        let texel = tape.scale(texel, half)?;
        let mut parts = Vec::with_capacity(3);
        for (plane, (a, b)) in self.planes.iter().zip(PLANE_AXES) {
            let ca = tape.slice_cols(texel, a, a + 1)?;
            let cb = tape.slice_cols(texel, b, b + 1)?;
            let coords = tape.concat_cols(&[ca, cb])?;
            parts.push(tape.bilinear(bound[plane.0], coords, self.resolution, self.resolution)?);
        }
        tape.concat_cols(&parts)
    }

    /// Same as [`Triplane::sample`] for constant points, without recording
    /// the coordinate arithmetic.
    pub fn sample_points(&self, tape: &mut Tape, bound: &[Var], x_norm: &[[f64; 3]]) -> Result<Var> {
        let n = x_norm.len();
        if let Some(v) = x_norm.iter().flatten().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!(
                "normalized coordinate {v} outside [-1, 1]"
            )));
        }
        let mut parts = Vec::with_capacity(3);
        for (plane, (a, b)) in self.planes.iter().zip(PLANE_AXES) {
            let data = x_norm
                .iter()
                .flat_map(|p| [self.to_texel(p[a]), self.to_texel(p[b])])
                .collect();
            let coords = tape.constant(Tensor::matrix(n, 2, data)?)?;
            parts.push(tape.bilinear(bound[plane.0], coords, self.resolution, self.resolution)?);
        }
        tape.concat_cols(&parts)
    }
}
