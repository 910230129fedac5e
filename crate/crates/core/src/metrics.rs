//! Full-reference image quality: PSNR and single-scale SSIM.

use crate::error::{Error, Result};
use crate::scene::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::shape(
            "image metric",
            format!("{}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height()),
        ));
    }
    Ok(())
}

/// `10 log10(1 / MSE)` over all pixels and channels after clamping to
/// `[0, 1]`; identical images give `f64::INFINITY`.
pub fn psnr(reference: &Image, candidate: &Image) -> Result<f64> {
    check_pair(reference, candidate)?;
    let n = reference.data().len();
    if n == 0 {
        return Err(Error::invalid("empty images"));
    }
    let mse = reference
        .data()
        .iter()
        .zip(candidate.data())
        .map(|(a, b)| {
            let d = a.clamp(0.0, 1.0) - b.clamp(0.0, 1.0);
            d * d
        })
        .sum::<f64>()
        / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of a `w x h` plane with `taps`.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| taps[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03 and unit dynamic range, averaged over valid window positions
/// and then over channels. Inputs are clamped to `[0, 1]`.
pub fn ssim(reference: &Image, candidate: &Image) -> Result<f64> {
    check_pair(reference, candidate)?;
    let (w, h) = (reference.width(), reference.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for c in 0..3 {
        let a: Vec<f64> = reference.data().iter().skip(c).step_by(3).map(|v| v.clamp(0.0, 1.0)).collect();
        let b: Vec<f64> = candidate.data().iter().skip(c).step_by(3).map(|v| v.clamp(0.0, 1.0)).collect();
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let [ma, mb, maa, mbb, mab] = [&a, &b, &aa, &bb, &ab].map(|p| filter_valid(p, w, h, &taps));
        let n = ma.len();
        let mut s = 0.0;
        for i in 0..n {
            let (mu_a, mu_b) = (ma[i], mb[i]);
            let va = maa[i] - mu_a * mu_a;
            let vb = mbb[i] - mu_b * mu_b;
            let cov = mab[i] - mu_a * mu_b;
            s += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
        }
        total += s / n as f64;
    }
    Ok(total / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_cases() {
        let a = Image::filled(4, 4, [0.3; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = Image::filled(4, 4, [0.4; 3]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = Image::filled(4, 4, [0.8; 3]);
        assert!((psnr(&a, &c).unwrap() - 6.020_599_913_279_624).abs() < 1e-9);
        assert!(psnr(&a, &Image::filled(4, 5, [0.0; 3])).is_err());
    }

    #[test]
    fn ssim_requires_window_sized_images() {
        let a = Image::filled(10, 20, [0.5; 3]);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn taps_are_normalized_and_symmetric() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(t[0], t[10]);
    }
}
