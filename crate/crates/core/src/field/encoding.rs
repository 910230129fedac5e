//! Frequency encoding of positions and real spherical harmonics of directions.

use std::f64::consts::PI;

use crate::camera::Vec3;
use crate::error::{Error, Result};

pub const SH_COEFFS: usize = 16;

pub fn positional_dim(frequencies: usize) -> usize {
    3 + 6 * frequencies
}

/// `[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x), cos(2^{L-1} pi x)]`,
/// each block holding the three coordinates.
pub fn positional_encode(x: &Vec3, frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(positional_dim(frequencies));
    positional_encode_into(x, frequencies, &mut out);
    out
}

pub fn positional_encode_into(x: &Vec3, frequencies: usize, out: &mut Vec<f64>) {
    out.extend_from_slice(x.as_slice());
    let mut freq = PI;
    for _ in 0..frequencies {
        out.extend(x.iter().map(|v| (freq * v).sin()));
        out.extend(x.iter().map(|v| (freq * v).cos()));
        freq *= 2.0;
    }
}

/// Real spherical harmonics of degrees 0 to 3 at unit direction `d`.
pub fn sh_encode(d: &Vec3) -> Result<[f64; SH_COEFFS]> {
    let n = d.norm();
    if !((n - 1.0).abs() <= 1e-9) {
        return Err(Error::invalid(format!("direction must be unit length, norm is {n}")));
    }
    Ok(sh_basis(d))
}

pub(crate) fn sh_basis(d: &Vec3) -> [f64; SH_COEFFS] {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        0.282_094_791_773_878_14,
        -0.488_602_511_902_919_9 * y,
        0.488_602_511_902_919_9 * z,
        -0.488_602_511_902_919_9 * x,
        1.092_548_430_592_079_2 * x * y,
        -1.092_548_430_592_079_2 * y * z,
        0.315_391_565_252_520_05 * (2.0 * zz - xx - yy),
        -1.092_548_430_592_079_2 * x * z,
        0.546_274_215_296_039_6 * (xx - yy),
        -0.590_043_589_926_643_5 * y * (3.0 * xx - yy),
        2.890_611_442_640_554 * x * y * z,
        -0.457_045_799_464_465_8 * y * (4.0 * zz - xx - yy),
        0.373_176_332_590_115_4 * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        -0.457_045_799_464_465_8 * x * (4.0 * zz - xx - yy),
        1.445_305_721_320_277 * z * (xx - yy),
        -0.590_043_589_926_643_5 * x * (xx - 3.0 * yy),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_gives_unit_cosines() {
        let e = positional_encode(&Vec3::zeros(), 6);
        assert_eq!(e.len(), 39);
        for l in 0..6 {
            assert!(e[3 + 6 * l..6 + 6 * l].iter().all(|&v| v == 0.0));
            assert!(e[6 + 6 * l..9 + 6 * l].iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn degenerate_and_first_frequency() {
        let x = Vec3::new(0.2, -0.4, 0.9);
        assert_eq!(positional_encode(&x, 0), vec![0.2, -0.4, 0.9]);
        let e = positional_encode(&Vec3::new(1.0, 0.0, 0.0), 1);
        assert!(e[3].abs() < 1e-12);
        assert!((e[6] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_term_and_polar_axis() {
        let d = Vec3::new(1.0, 2.0, -0.5).normalize();
        assert!((sh_encode(&d).unwrap()[0] - 0.282_094_8).abs() < 1e-7);
        let y = sh_encode(&Vec3::z()).unwrap();
        // m != 0 entries of each degree.
        for i in [1, 3, 4, 5, 7, 8, 9, 10, 11, 13, 14, 15] {
            assert_eq!(y[i], 0.0, "entry {i}");
        }
        assert!(sh_encode(&Vec3::new(1.0, 1.0, 0.0)).is_err());
    }
}
