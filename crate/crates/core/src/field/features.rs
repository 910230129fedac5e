//! Frozen pixel-aligned features of the training views and their projection
//! onto world points.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::camera::{Camera, Vec3};
use crate::math::interp;
use crate::scene::Image;

/// Channels produced by the handcrafted extractor before expansion.
pub const RAW_CHANNELS: usize = 16;
const LEVELS: usize = 3;

/// Row-major `[height * width, channels]` feature image.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    /// Bilinear lookup at continuous pixel coordinates (pixel centers at
    /// `+0.5`), edge-clamped.
    pub fn sample_into(&self, u: f64, v: f64, out: &mut [f64]) {
        interp::sample_into(
            &self.data,
            self.width,
            self.height,
            self.channels,
            u - 0.5,
            v - 0.5,
            out,
        );
    }

    pub fn texel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }
}

/// One feature map per training view, in training-view order.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceFeatureMaps {
    pub maps: Vec<FeatureMap>,
    pub seed: u64,
}

/// Single-channel float plane.
#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.v[y * self.w + x]
    }

    /// 5-tap binomial blur followed by 2x decimation.
    fn pyr_down(&self) -> Plane {
        const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (w, h) = (self.w, self.h);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = (0..5)
                    .map(|k| K[k] * self.at(x as isize + k as isize - 2, y as isize))
                    .sum();
            }
        }
        let tmp = Plane { w, h, v: tmp };
        let (nw, nh) = (w.div_ceil(2).max(1), h.div_ceil(2).max(1));
        let mut out = vec![0.0; nw * nh];
        for y in 0..nh {
            for x in 0..nw {
                out[y * nw + x] = (0..5)
                    .map(|k| K[k] * tmp.at(2 * x as isize, 2 * y as isize + k as isize - 2))
                    .sum();
            }
        }
        Plane { w: nw, h: nh, v: out }
    }

    /// Bilinear resample to `w x h`, aligning pixel centers.
    fn upsample(&self, w: usize, h: usize) -> Plane {
        if (w, h) == (self.w, self.h) {
            return self.clone();
        }
        let sx = self.w as f64 / w as f64;
        let sy = self.h as f64 / h as f64;
        let mut v = vec![0.0; w * h];
        let mut out = [0.0];
        for y in 0..h {
            for x in 0..w {
                let fx = (x as f64 + 0.5) * sx - 0.5;
                let fy = (y as f64 + 0.5) * sy - 0.5;
                interp::sample_into(&self.v, self.w, self.h, 1, fx, fy, &mut out);
                v[y * w + x] = out[0];
            }
        }
        Plane { w, h, v }
    }

    /// `(|d/dx|, |d/dy|)` by central differences with clamped borders.
    fn gradient_magnitudes(&self) -> (Plane, Plane) {
        let (w, h) = (self.w, self.h);
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (xi, yi) = (x as isize, y as isize);
                gx[y * w + x] = (0.5 * (self.at(xi + 1, yi) - self.at(xi - 1, yi))).abs();
                gy[y * w + x] = (0.5 * (self.at(xi, yi + 1) - self.at(xi, yi - 1))).abs();
            }
        }
        (Plane { w, h, v: gx }, Plane { w, h, v: gy })
    }
}

fn luminance(rgb: &[Plane; 3]) -> Plane {
    let v = (0..rgb[0].v.len())
        .map(|i| 0.299 * rgb[0].v[i] + 0.587 * rgb[1].v[i] + 0.114 * rgb[2].v[i])
        .collect();
    Plane {
        w: rgb[0].w,
        h: rgb[0].h,
        v,
    }
}

/// The 16 raw channels per pixel: pyramid RGB at three levels (9), gradient
/// magnitudes of luminance at three levels (6) and luminance (1).
pub fn raw_features(img: &Image) -> FeatureMap {
    let (w, h) = (img.width(), img.height());
    let base: [Plane; 3] = std::array::from_fn(|c| Plane {
        w,
        h,
        v: img.data().chunks(3).map(|p| p[c]).collect(),
    });
    let mut levels = vec![base];
    for l in 1..LEVELS {
        let prev: &[Plane; 3] = &levels[l - 1];
        let next = std::array::from_fn(|c| prev[c].pyr_down());
        levels.push(next);
    }
    let mut planes: Vec<Plane> = Vec::with_capacity(RAW_CHANNELS);
    for lvl in &levels {
        for p in lvl {
            planes.push(p.upsample(w, h));
        }
    }
    for lvl in &levels {
        let (gx, gy) = luminance(lvl).gradient_magnitudes();
        planes.push(gx.upsample(w, h));
        planes.push(gy.upsample(w, h));
    }
    planes.push(luminance(&levels[0]));
    debug_assert_eq!(planes.len(), RAW_CHANNELS);

    let mut data = Vec::with_capacity(w * h * RAW_CHANNELS);
    for i in 0..w * h {
        data.extend(planes.iter().map(|p| p.v[i]));
    }
    FeatureMap {
        width: w,
        height: h,
        channels: RAW_CHANNELS,
        data,
    }
}

/// Seeded `channels x RAW_CHANNELS` matrix with orthonormal columns
/// (Gram-Schmidt on Gaussian draws), stored row-major.
pub fn expansion_matrix(seed: u64, channels: usize) -> Vec<f64> {
    assert!(channels >= RAW_CHANNELS, "cannot expand into fewer channels");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(RAW_CHANNELS);
    while cols.len() < RAW_CHANNELS {
        let mut v: Vec<f64> = (0..channels).map(|_| StandardNormal.sample(&mut rng)).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|a| *a /= n);
            cols.push(v);
        }
    }
    let mut m = vec![0.0; channels * RAW_CHANNELS];
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            m[i * RAW_CHANNELS + j] = v;
        }
    }
    m
}

/// Deterministic frozen features with `channels` channels per pixel.
pub fn extract_reference_features(images: &[Image], seed: u64, channels: usize) -> ReferenceFeatureMaps {
    let q = expansion_matrix(seed, channels);
    let maps = images
        .iter()
        .map(|img| {
            let raw = raw_features(img);
            let mut data = Vec::with_capacity(raw.width * raw.height * channels);
            for px in raw.data.chunks(RAW_CHANNELS) {
                for row in q.chunks(RAW_CHANNELS) {
                    data.push(row.iter().zip(px).map(|(a, b)| a * b).sum());
                }
            }
            FeatureMap {
                width: raw.width,
                height: raw.height,
                channels,
                data,
            }
        })
        .collect();
    ReferenceFeatureMaps { maps, seed }
}

/// Projects `x` into every reference view and writes the concatenated
/// bilinear feature lookups into `out` (`maps.len() * channels` entries).
/// Views where `x` is behind the camera or off-image contribute zeros.
pub fn aggregate_reference_into(x: &Vec3, maps: &ReferenceFeatureMaps, cameras: &[Camera], out: &mut [f64]) {
    let ch = maps.maps.first().map_or(0, |m| m.channels);
    debug_assert_eq!(out.len(), ch * maps.maps.len());
    for (k, (map, cam)) in maps.maps.iter().zip(cameras).enumerate() {
        let slot = &mut out[k * ch..(k + 1) * ch];
        match cam.project_to_reference(x) {
            Some((u, v)) => map.sample_into(u, v, slot),
            None => slot.iter_mut().for_each(|s| *s = 0.0),
        }
    }
}

pub fn aggregate_reference(x: &Vec3, maps: &ReferenceFeatureMaps, cameras: &[Camera]) -> Vec<f64> {
    let ch = maps.maps.first().map_or(0, |m| m.channels);
    let mut out = vec![0.0; ch * maps.maps.len()];
    aggregate_reference_into(x, maps, cameras, &mut out);
    out
}
