//! Point-cloud keypoint anchors with color-consistency weights.

use std::fmt::Write as _;
use std::path::Path;

use crate::camera::{Camera, Projection};
use crate::error::{Error, Result};
use crate::scene::{Image, PointCloud};

/// Projection of a cloud point into one view, with its target depth and
/// confidence weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeypointAnchor {
    /// Index into the camera list given to [`build_anchors`].
    pub view: usize,
    pub u: f64,
    pub v: f64,
    /// Camera-space depth of the point.
    pub depth: f64,
    pub weight: f64,
    pub point: usize,
}

/// Mean absolute channel difference.
pub fn color_error(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0
}

/// `clamp((1 - e1 - e2)^2, 0, 1)`.
pub fn adaptive_weight(e1: f64, e2: f64) -> f64 {
    let a = 1.0 - e1 - e2;
    (a * a).clamp(0.0, 1.0)
}

/// Multi-view spread of the colors seen for one point:
/// `sqrt(sum_k S(c_k, mean) / (M' - 1))` over the `M' >= 2` visible views.
pub fn consistency_error(colors: &[[f64; 3]]) -> f64 {
    let m = colors.len() as f64;
    let mut mean = [0.0; 3];
    for c in colors {
        for k in 0..3 {
            mean[k] += c[k] / m;
        }
    }
    let s: f64 = colors.iter().map(|c| color_error(c, &mean)).sum();
    (s / (m - 1.0)).sqrt()
}

/// Projects every cloud point into every view. Points seen by fewer than two
/// views are dropped; the rest yield one anchor per visible view. Occlusion
/// is not tested.
pub fn build_anchors(cloud: &PointCloud, cameras: &[Camera], images: &[Image]) -> Result<Vec<KeypointAnchor>> {
    if cloud.is_empty() {
        return Err(Error::invalid("point cloud is empty"));
    }
    if cameras.len() != images.len() {
        return Err(Error::invalid("need one image per camera"));
    }
    if cameras.len() < 2 {
        return Err(Error::invalid("anchors need at least two views"));
    }
    let mut anchors = Vec::new();
    let mut seen = Vec::with_capacity(cameras.len());
    for (i, (p, pc)) in cloud.points.iter().zip(&cloud.colors).enumerate() {
        seen.clear();
        for (k, (cam, img)) in cameras.iter().zip(images).enumerate() {
            let Projection::Visible { u, v, depth } = cam.project_world(p) else {
                continue;
            };
            if !(u >= 0.0 && u < cam.width() as f64 && v >= 0.0 && v < cam.height() as f64) {
                continue;
            }
            seen.push((k, u, v, depth, img.sample(u, v)));
        }
        if seen.len() < 2 {
            continue;
        }
        let colors: Vec<[f64; 3]> = seen.iter().map(|s| s.4).collect();
        let e1 = consistency_error(&colors);
        for &(view, u, v, depth, c) in &seen {
            let e2 = color_error(&c, pc);
            anchors.push(KeypointAnchor {
                view,
                u,
                v,
                depth,
                weight: adaptive_weight(e1, e2),
                point: i,
            });
        }
    }
    Ok(anchors)
}

/// CSV `view_id,u,v,depth,weight,point_index`; `view_ids` maps anchor view
/// indices to dataset view ids.
pub fn anchors_to_csv(anchors: &[KeypointAnchor], view_ids: &[usize]) -> String {
    let mut out = String::from("view_id,u,v,depth,weight,point_index\n");
    for a in anchors {
        let id = view_ids.get(a.view).copied().unwrap_or(a.view);
        let _ = writeln!(out, "{id},{},{},{},{},{}", a.u, a.v, a.depth, a.weight, a.point);
    }
    out
}

pub fn save_anchors(path: &Path, anchors: &[KeypointAnchor], view_ids: &[usize]) -> Result<()> {
    std::fs::write(path, anchors_to_csv(anchors, view_ids)).map_err(|e| Error::io(path, e))
}
