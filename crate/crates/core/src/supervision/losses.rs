//! Loss terms, recorded on the tape, with plain-value twins for checking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Tape, Tensor, Var};

/// Mean squared error over rays and channels between `pred` (`[rays, 3]`)
/// and constant `gt`.
pub fn color_loss(tape: &mut Tape, pred: Var, gt: &Tensor) -> Result<Var> {
    if tape.value(pred).shape() != gt.shape() {
        return Err(Error::shape(
            "color_loss",
            format!("{:?} vs {:?}", tape.value(pred).shape(), gt.shape()),
        ));
    }
    let g = tape.constant(gt.clone())?;
    let d = tape.sub(pred, g)?;
    let sq = tape.square(d)?;
    tape.mean(sq)
}

pub fn color_loss_values(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::shape("color_loss", format!("{} vs {} values", pred.len(), gt.len())));
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / pred.len() as f64)
}

/// `(1 / N) sum_i w_i (pred_i - target_i)^2` for `pred` of shape `[N, 1]`.
pub fn depth_loss(tape: &mut Tape, pred: Var, target: &[f64], weight: &[f64]) -> Result<Var> {
    let n = target.len();
    if n == 0 {
        return Err(Error::invalid("depth loss needs at least one anchor"));
    }
    if tape.value(pred).len() != n || weight.len() != n {
        return Err(Error::shape("depth_loss", "predictions, targets and weights differ in length"));
    }
    let t = tape.constant(Tensor::matrix(n, 1, target.to_vec())?)?;
    let w = tape.constant(Tensor::matrix(n, 1, weight.to_vec())?)?;
    let d = tape.sub(pred, t)?;
    let sq = tape.square(d)?;
    let wsq = tape.mul(sq, w)?;
    tape.mean(wsq)
}

pub fn depth_loss_values(pred: &[f64], target: &[f64], weight: &[f64]) -> Result<f64> {
    let n = target.len();
    if n == 0 {
        return Err(Error::invalid("depth loss needs at least one anchor"));
    }
    if pred.len() != n || weight.len() != n {
        return Err(Error::shape("depth_loss", "predictions, targets and weights differ in length"));
    }
    Ok((0..n).map(|i| weight[i] * (pred[i] - target[i]).powi(2)).sum::<f64>() / n as f64)
}

/// Edge gates `exp(-|dI|)` for forward differences along x then y of a
/// `size x size` RGB patch (`|dI|` is the mean absolute channel difference).
pub fn edge_gates(rgb: &[f64], size: usize) -> (Vec<f64>, Vec<f64>) {
    let px = |x: usize, y: usize| &rgb[3 * (y * size + x)..3 * (y * size + x) + 3];
    let grad = |a: &[f64], b: &[f64]| (0..3).map(|c| (b[c] - a[c]).abs()).sum::<f64>() / 3.0;
    let mut gx = Vec::with_capacity(size * (size - 1));
    let mut gy = Vec::with_capacity(size * (size - 1));
    for y in 0..size {
        for x in 0..size - 1 {
            gx.push((-grad(px(x, y), px(x + 1, y))).exp());
        }
    }
    for y in 0..size - 1 {
        for x in 0..size {
            gy.push((-grad(px(x, y), px(x, y + 1))).exp());
        }
    }
    (gx, gy)
}

fn shifted_pairs(size: usize) -> [(Vec<usize>, Vec<usize>); 2] {
    let mut xa = Vec::new();
    let mut xb = Vec::new();
    for y in 0..size {
        for x in 0..size - 1 {
            xa.push(y * size + x);
            xb.push(y * size + x + 1);
        }
    }
    let mut ya = Vec::new();
    let mut yb = Vec::new();
    for y in 0..size - 1 {
        for x in 0..size {
            ya.push(y * size + x);
            yb.push((y + 1) * size + x);
        }
    }
    [(xa, xb), (ya, yb)]
}

fn check_patch(disp_len: usize, rgb_len: usize, size: usize) -> Result<()> {
    if size < 2 {
        return Err(Error::invalid("smoothness patch must be at least 2x2"));
    }
    if disp_len != size * size || rgb_len != 3 * size * size {
        return Err(Error::shape("smoothness_loss", format!("patch buffers do not match size {size}")));
    }
    Ok(())
}

/// Edge-aware smoothness of a `size x size` disparity patch (`[size^2, 1]`),
/// gated by the image gradients of `rgb` (treated as a constant). Each
/// direction's term is averaged over its valid forward differences; the
/// two are summed.
pub fn smoothness_loss(tape: &mut Tape, disparity: Var, rgb: &[f64], size: usize) -> Result<Var> {
    check_patch(tape.value(disparity).len(), rgb.len(), size)?;
    let (gx, gy) = edge_gates(rgb, size);
    let mut terms = Vec::with_capacity(2);
    for ((a, b), gate) in shifted_pairs(size).into_iter().zip([gx, gy]) {
        let da = tape.gather_rows(disparity, &a)?;
        let db = tape.gather_rows(disparity, &b)?;
        let diff = tape.sub(db, da)?;
        let mag = tape.abs(diff)?;
        let g = tape.constant(Tensor::matrix(gate.len(), 1, gate)?)?;
        let gated = tape.mul(mag, g)?;
        terms.push(tape.mean(gated)?);
    }
    tape.add(terms[0], terms[1])
}

pub fn smoothness_loss_values(disparity: &[f64], rgb: &[f64], size: usize) -> Result<f64> {
    check_patch(disparity.len(), rgb.len(), size)?;
    let (gx, gy) = edge_gates(rgb, size);
    let mut total = 0.0;
    for ((a, b), gate) in shifted_pairs(size).into_iter().zip([gx, gy]) {
        let s: f64 = (0..a.len())
            .map(|i| (disparity[b[i]] - disparity[a[i]]).abs() * gate[i])
            .sum();
        total += s / a.len() as f64;
    }
    Ok(total)
}

/// Training stage: depth-anchored early, disparity-smoothed afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    DepthGuided,
    Smooth,
}

impl Stage {
    pub fn at(iter: usize, depth_stage_iters: usize) -> Self {
        if iter < depth_stage_iters {
            Stage::DepthGuided
        } else {
            Stage::Smooth
        }
    }
}

/// Magnitudes of the two auxiliary terms when active.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub depth: f64,
    pub smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            depth: 0.001,
            smooth: 1.0,
        }
    }
}

impl LossWeights {
    /// `(lambda_1, lambda_2)` in effect during `stage`.
    pub fn lambdas(&self, stage: Stage) -> (f64, f64) {
        match stage {
            Stage::DepthGuided => (self.depth, 0.0),
            Stage::Smooth => (0.0, self.smooth),
        }
    }
}

/// Scalar loss values of one step. Terms that were not computed are zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub stage: Stage,
    pub lambda_depth: f64,
    pub lambda_smooth: f64,
    pub color: f64,
    pub depth: f64,
    pub smooth: f64,
    pub total: f64,
}

/// `L_color + lambda_1 L_depth + lambda_2 L_smooth`.
pub fn combine(color: f64, depth: f64, smooth: f64, lambda_depth: f64, lambda_smooth: f64) -> f64 {
    color + lambda_depth * depth + lambda_smooth * smooth
}

/// Report for already evaluated terms. A term whose weight is zero in this
/// stage is reported as zero whatever value is passed.
pub fn total_loss(color: f64, depth: f64, smooth: f64, stage: Stage, weights: &LossWeights) -> LossReport {
    let (l1, l2) = weights.lambdas(stage);
    let depth = if l1 != 0.0 { depth } else { 0.0 };
    let smooth = if l2 != 0.0 { smooth } else { 0.0 };
    LossReport {
        stage,
        lambda_depth: l1,
        lambda_smooth: l2,
        color,
        depth,
        smooth,
        total: combine(color, depth, smooth, l1, l2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_loss_cases() {
        assert_eq!(color_loss_values(&[0.3; 6], &[0.3; 6]).unwrap(), 0.0);
        assert!((color_loss_values(&[0.6; 6], &[0.5; 6]).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(color_loss_values(&[0.0; 3], &[1.0; 3]).unwrap(), 1.0);
        assert!(color_loss_values(&[0.0; 3], &[1.0; 6]).is_err());
    }

    #[test]
    fn depth_loss_cases() {
        assert_eq!(depth_loss_values(&[2.0, 3.0], &[2.0, 3.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(depth_loss_values(&[2.5], &[2.0], &[1.0]).unwrap(), 0.25);
        assert_eq!(depth_loss_values(&[9.0, -4.0], &[2.0, 3.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(depth_loss_values(&[], &[], &[]).is_err());
    }

    #[test]
    fn smoothness_cases() {
        let size = 4;
        let flat = vec![0.5; 3 * size * size];
        assert_eq!(smoothness_loss_values(&[2.0; 16], &flat, size).unwrap(), 0.0);
        let ramp: Vec<f64> = (0..16).map(|i| (i % 4) as f64).collect();
        assert_eq!(smoothness_loss_values(&ramp, &flat, size).unwrap(), 1.0);
        // A sharp vertical edge between every column pair.
        let edges: Vec<f64> = (0..16).flat_map(|i| [10.0 * (i % 4) as f64; 3]).collect();
        let v = smoothness_loss_values(&ramp, &edges, size).unwrap();
        assert!((v - (-10.0f64).exp()).abs() < 1e-18);
        assert!(smoothness_loss_values(&[1.0], &[0.0; 3], 1).is_err());
    }

    #[test]
    fn schedule_arithmetic() {
        let w = LossWeights::default();
        let r = total_loss(1.0, 2.0, 7.0, Stage::DepthGuided, &w);
        assert_eq!(r.total, 1.002);
        assert_eq!((r.lambda_depth, r.lambda_smooth), (0.001, 0.0));
        let r = total_loss(1.0, 123.0, 0.5, Stage::Smooth, &w);
        assert_eq!(r.total, 1.5);
        assert_eq!(total_loss(1.0, 9.0, 0.5, Stage::Smooth, &w).total, r.total);
        assert_eq!(Stage::at(9, 10), Stage::DepthGuided);
        assert_eq!(Stage::at(10, 10), Stage::Smooth);
    }
}
