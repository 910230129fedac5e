//! Coarse binary density grid used to skip field evaluations in empty space.

use crate::camera::{Aabb, Vec3};
use crate::error::{Error, Result};
use crate::field::TriDF;

/// `resolution^3` cells over the bbox, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub resolution: usize,
    pub threshold: f64,
    pub bbox: Aabb,
    pub occupied: Vec<bool>,
}

const CHUNK: usize = 4096;

impl OccupancyGrid {
    /// Grid with every cell occupied.
    pub fn full(bbox: Aabb, resolution: usize) -> Self {
        Self {
            resolution,
            threshold: 0.0,
            bbox,
            occupied: vec![true; resolution.pow(3)],
        }
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    /// Cell containing `x`, or `None` outside the bbox.
    pub fn cell(&self, x: &Vec3) -> Option<[usize; 3]> {
        let n = self.bbox.normalize(x);
        let r = self.resolution as f64;
        let mut c = [0; 3];
        for a in 0..3 {
            if !(n[a] >= -1.0 - 1e-9 && n[a] <= 1.0 + 1e-9) {
                return None;
            }
            c[a] = (((n[a] + 1.0) * 0.5 * r).floor().max(0.0) as usize).min(self.resolution - 1);
        }
        Some(c)
    }

    /// Points outside the bbox count as empty.
    pub fn is_occupied(&self, x: &Vec3) -> bool {
        self.cell(x)
            .is_some_and(|[i, j, k]| self.occupied[self.index(i, j, k)])
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.occupied.iter().filter(|&&o| o).count() as f64 / self.occupied.len() as f64
    }
}

fn densities(model: &TriDF, points: &[Vec3]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(points.len());
    for chunk in points.chunks(CHUNK) {
        out.extend(model.density_values(chunk)?);
    }
    Ok(out)
}

/// Evaluates density at every cell's corners and center. A cell is
/// occupied when any of those reaches `threshold`; occupied cells are then
/// dilated by one cell so thin structures between probes survive.
pub fn occupancy_grid_update(model: &TriDF, resolution: usize, threshold: f64) -> Result<OccupancyGrid> {
    if resolution == 0 {
        return Err(Error::invalid("occupancy resolution must be positive"));
    }
    if !(threshold >= 0.0) {
        return Err(Error::invalid("occupancy threshold must be non-negative"));
    }
    let r = resolution;
    let bbox = model.bbox;
    let lerp = |i: f64, a: usize| bbox.min[a] + (bbox.max[a] - bbox.min[a]) * i / r as f64;

    let v = r + 1;
    let mut corners = Vec::with_capacity(v.pow(3));
    for k in 0..v {
        for j in 0..v {
            for i in 0..v {
                corners.push(Vec3::new(lerp(i as f64, 0), lerp(j as f64, 1), lerp(k as f64, 2)));
            }
        }
    }
    let mut centers = Vec::with_capacity(r.pow(3));
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                centers.push(Vec3::new(
                    lerp(i as f64 + 0.5, 0),
                    lerp(j as f64 + 0.5, 1),
                    lerp(k as f64 + 0.5, 2),
                ));
            }
        }
    }
    let sc = densities(model, &corners)?;
    let sm = densities(model, &centers)?;

    let mut hot = vec![false; r.pow(3)];
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                let cell = (k * r + j) * r + i;
                let mut s = sm[cell];
                for (di, dj, dk) in (0..8).map(|c| (c & 1, (c >> 1) & 1, (c >> 2) & 1)) {
                    s = s.max(sc[((k + dk) * v + j + dj) * v + i + di]);
                }
                hot[cell] = s >= threshold;
            }
        }
    }
    let mut occupied = vec![false; r.pow(3)];
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                if !hot[(k * r + j) * r + i] {
                    continue;
                }
                for kk in k.saturating_sub(1)..(k + 2).min(r) {
                    for jj in j.saturating_sub(1)..(j + 2).min(r) {
                        for ii in i.saturating_sub(1)..(i + 2).min(r) {
                            occupied[(kk * r + jj) * r + ii] = true;
                        }
                    }
                }
            }
        }
    }
    Ok(OccupancyGrid {
        resolution,
        threshold,
        bbox,
        occupied,
    })
}
