//! Edge-clamped bilinear interpolation over row-major `[height * width, channels]` grids.

/// Four texel indices and their interpolation weights for a continuous
/// texel-space coordinate. Texel `(i, j)` sits at integer coordinate `(i, j)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BilinearFootprint {
    pub index: [usize; 4],
    pub weight: [f64; 4],
    /// Column/row of the lower corner and the fractional offsets.
    pub x0: usize,
    pub y0: usize,
    pub fx: f64,
    pub fy: f64,
    /// False when the coordinate was clamped on that axis (zero derivative).
    pub inside_x: bool,
    pub inside_y: bool,
}

impl BilinearFootprint {
    pub fn new(width: usize, height: usize, x: f64, y: f64) -> Self {
        let (x0, x1, fx, inside_x) = axis(width, x);
        let (y0, y1, fy, inside_y) = axis(height, y);
        Self {
            index: [
                y0 * width + x0,
                y0 * width + x1,
                y1 * width + x0,
                y1 * width + x1,
            ],
            weight: [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ],
            x0,
            y0,
            fx,
            fy,
            inside_x,
            inside_y,
        }
    }
}

fn axis(len: usize, x: f64) -> (usize, usize, f64, bool) {
    debug_assert!(len > 0);
    let max = (len - 1) as f64;
    if len == 1 || !(x >= 0.0) {
        return (0, 0, 0.0, false);
    }
    if x >= max {
        return (len - 2, len - 1, 1.0, x == max);
    }
    let i0 = x.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, x - i0 as f64, true)
}

/// Samples `grid` (`[height * width, channels]`) at `(x, y)` into `out`.
pub fn sample_into(
    grid: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    x: f64,
    y: f64,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), channels);
    let fp = BilinearFootprint::new(width, height, x, y);
    out.iter_mut().for_each(|v| *v = 0.0);
    for (&idx, &w) in fp.index.iter().zip(&fp.weight) {
        if w == 0.0 {
            continue;
        }
        let texel = &grid[idx * channels..(idx + 1) * channels];
        for (o, t) in out.iter_mut().zip(texel) {
            *o += w * t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_a_partition_of_unity() {
        for &(x, y) in &[(0.0, 0.0), (0.3, 2.7), (3.0, 3.0), (-1.0, 1.5), (2.999, 0.001)] {
            let fp = BilinearFootprint::new(4, 4, x, y);
            let s: f64 = fp.weight.iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn clamps_outside_the_grid() {
        let grid: Vec<f64> = (0..4).map(|v| v as f64).collect();
        let mut out = [0.0];
        sample_into(&grid, 2, 2, 1, -3.0, -3.0, &mut out);
        assert_eq!(out[0], 0.0);
        sample_into(&grid, 2, 2, 1, 9.0, 9.0, &mut out);
        assert_eq!(out[0], 3.0);
        sample_into(&grid, 2, 2, 1, 0.5, 0.5, &mut out);
        assert_eq!(out[0], 1.5);
    }
}
