//! Float RGB images and PNG encoding.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::interp;

/// Interleaved RGB image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "{width}x{height} RGB image needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample at continuous image-plane coordinates, where pixel
    /// `(x, y)` has its center at `(x + 0.5, y + 0.5)`. Edge-clamped.
    pub fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        interp::sample_into(&self.data, self.width, self.height, 3, u - 0.5, v - 0.5, &mut out);
        out
    }

    /// Rounds every value to the nearest 8-bit level, as stored in a PNG.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| to_u8(v) as f64 / 255.0).collect(),
        }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        write_png(path, self.width, self.height, png::ColorType::Rgb, png::BitDepth::Eight, &self.to_rgb8())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::normalize_to_color8());
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::format(path, format!("cannot decode PNG: {e}")))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::format(path, "PNG too large"))?;
        let mut buf = vec![0; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::format(path, format!("cannot decode PNG: {e}")))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let bytes = &buf[..info.buffer_size()];
        let rgb: Vec<u8> = match info.color_type {
            png::ColorType::Rgb => bytes.to_vec(),
            png::ColorType::Rgba => bytes.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => bytes.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => bytes.chunks(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
            other => return Err(Error::format(path, format!("unsupported PNG color type {other:?}"))),
        };
        Self::from_rgb8(w, h, &rgb)
    }
}

fn to_u8(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let fail = |e: png::EncodingError| Error::format(path, format!("cannot encode PNG: {e}"));
    let mut writer = encoder.write_header().map_err(fail)?;
    writer.write_image_data(bytes).map_err(fail)?;
    writer.finish().map_err(fail)?;
    Ok(())
}

/// Range sidecar written next to a 16-bit depth PNG.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub min: f64,
    pub max: f64,
}

/// Writes `depth` (row-major, `width * height`) as a 16-bit grayscale PNG
/// linearly scaled over its own min/max, plus a `<path>.json` sidecar with
/// the range.
pub fn save_depth_png(path: &Path, width: usize, height: usize, depth: &[f64]) -> Result<DepthRange> {
    if depth.len() != width * height {
        return Err(Error::invalid("depth buffer size does not match image size"));
    }
    let min = depth.iter().copied().fold(f64::INFINITY, f64::min);
    let max = depth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if max > min { max - min } else { 1.0 };
    let mut bytes = Vec::with_capacity(depth.len() * 2);
    for &d in depth {
        let q = (65535.0 * ((d - min) / span)).round().clamp(0.0, 65535.0) as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    write_png(path, width, height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)?;
    let range = DepthRange { min, max };
    let sidecar = depth_sidecar_path(path);
    let json = serde_json::to_string_pretty(&range).expect("serializable");
    std::fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;
    Ok(range)
}

pub fn depth_sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Reads a depth PNG written by [`save_depth_png`] back into world units.
pub fn load_depth_png(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let sidecar = depth_sidecar_path(path);
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let range: DepthRange =
        serde_json::from_str(&text).map_err(|e| Error::format(&sidecar, e.to_string()))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, format!("cannot decode PNG: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "PNG too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, format!("cannot decode PNG: {e}")))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::format(path, "expected a 16-bit grayscale PNG"));
    }
    let span = if range.max > range.min { range.max - range.min } else { 1.0 };
    let depth = buf[..info.buffer_size()]
        .chunks(2)
        .map(|c| range.min + span * u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
        .collect();
    Ok((info.width as usize, info.height as usize, depth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_of_quantized_image() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..4 * 3 * 3).map(|i| (i as f64 * 0.037) % 1.0).collect();
        let img = Image::new(4, 3, data).unwrap().quantized();
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        assert_eq!(Image::load_png(&path).unwrap(), img);
    }

    #[test]
    fn bilinear_sample_at_pixel_center_is_the_pixel() {
        let data: Vec<f64> = (0..2 * 2 * 3).map(|i| i as f64 / 12.0).collect();
        let img = Image::new(2, 2, data).unwrap();
        assert_eq!(img.sample(1.5, 0.5), img.pixel(1, 0));
        let mid = img.sample(1.0, 1.0);
        for c in 0..3 {
            let mean = (img.pixel(0, 0)[c] + img.pixel(1, 0)[c] + img.pixel(0, 1)[c] + img.pixel(1, 1)[c]) / 4.0;
            assert!((mid[c] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn depth_png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let depth: Vec<f64> = (0..12).map(|i| 2.0 + i as f64 * 0.25).collect();
        let path = dir.path().join("d.png");
        let range = save_depth_png(&path, 4, 3, &depth).unwrap();
        assert_eq!(range, DepthRange { min: 2.0, max: 4.75 });
        let (w, h, back) = load_depth_png(&path).unwrap();
        assert_eq!((w, h), (4, 3));
        for (a, b) in depth.iter().zip(&back) {
            assert!((a - b).abs() <= 2.75 / 65535.0);
        }
    }
}
