//! Colored point clouds in `x,y,z,r,g,b` CSV form.

use std::fmt::Write as _;
use std::path::Path;

use crate::camera::{Aabb, Vec3};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// Colors in `[0, 1]`.
    pub colors: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, colors: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud is empty"));
        }
        if points.len() != colors.len() {
            return Err(Error::invalid("point and color counts differ"));
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("point cloud has non-finite coordinates"));
        }
        Ok(Self { points, colors })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Bounds of the points grown by `fraction` of the extent on each side.
    /// Degenerate axes get a unit extent.
    pub fn padded_bounds(&self, fraction: f64) -> Result<Aabb> {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let ext = (hi - lo).map(|e| if e > 0.0 { e } else { 1.0 });
        Aabb::new(lo - ext * fraction, hi + ext * fraction)
    }

    /// CSV text with colors scaled to `[0, 255]`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (p, c) in self.points.iter().zip(&self.colors) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                p.x,
                p.y,
                p.z,
                to_byte_scale(c[0]),
                to_byte_scale(c[1]),
                to_byte_scale(c[2])
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Snaps values within round-off of an 8-bit level so they print as integers.
fn to_byte_scale(c: f64) -> f64 {
    let v = c * 255.0;
    if (v - v.round()).abs() < 1e-9 {
        v.round()
    } else {
        v
    }
}

/// Parses CSV text; `path` only labels errors. Blank lines and lines starting
/// with `#` are skipped, as is a leading `x,y,z,...` header.
pub fn parse_point_cloud(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with('x')) {
            continue;
        }
        let fail = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(fail(format!("expected 6 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 6];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .map_err(|_| fail(format!("`{f}` is not a number")))?;
            if !slot.is_finite() {
                return Err(fail(format!("`{f}` is not finite")));
            }
        }
        if v[3..].iter().any(|c| !(0.0..=255.0).contains(c)) {
            return Err(fail("color components must lie in [0, 255]".into()));
        }
        points.push(Vec3::new(v[0], v[1], v[2]));
        colors.push([v[3] / 255.0, v[4] / 255.0, v[5] / 255.0]);
    }
    if points.is_empty() {
        return Err(Error::format(path, "point cloud has no points"));
    }
    PointCloud::new(points, colors)
}

pub fn load_point_cloud(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_point_cloud(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<PointCloud> {
        parse_point_cloud(s, Path::new("points.csv"))
    }

    #[test]
    fn single_red_point() {
        let c = parse("0,0,0,255,0,0\n").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.colors[0], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(parse("").is_err());
        assert!(parse("\n\n").is_err());
    }

    #[test]
    fn thousand_lines() {
        let text: String = (0..1000).map(|i| format!("{i},0,1,10,20,30\n")).collect();
        assert_eq!(parse(&text).unwrap().len(), 1000);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("0,0,0,1,1,1\n1,2,x,0,0,0\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
        assert!(parse("0,0,0,1,1\n").is_err());
        assert!(parse("0,0,0,1,1,300\n").is_err());
    }

    #[test]
    fn csv_round_trip_of_integer_colors() {
        let c = PointCloud::new(
            vec![Vec3::new(0.1, -2.5, 1e-3)],
            vec![[17.0 / 255.0, 0.0, 1.0]],
        )
        .unwrap();
        assert_eq!(parse(&c.to_csv()).unwrap(), c);
    }
}
