use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ModelConfig;
use crate::supervision::LossWeights;

/// Everything a training run needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_iters: usize,
    /// Length of the depth-guided stage; `None` means a third of the run.
    pub depth_stage_iters: Option<usize>,
    pub ray_batch: usize,
    pub samples_per_ray: usize,
    pub anchors_per_iter: usize,
    pub patch_size: usize,
    pub patch_stride: usize,
    /// Probability that a smoothness patch is rendered from a pose between
    /// two training cameras rather than from a training camera.
    pub patch_interpolated_fraction: f64,
    /// Step size for the MLPs.
    pub learning_rate: f64,
    /// Step size for the feature planes.
    pub plane_learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub near: f64,
    pub far: f64,
    pub occupancy: bool,
    pub occupancy_resolution: usize,
    pub occupancy_threshold: f64,
    pub occupancy_every: usize,
    /// Test-view evaluation period; 0 evaluates only at the end.
    pub eval_every: usize,
    /// Checkpoint period when an output directory is given; 0 writes only
    /// the final checkpoint.
    pub checkpoint_every: usize,
    /// Rays per gradient task; tasks are reduced in a fixed order.
    pub rays_per_task: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iters: 2000,
            depth_stage_iters: None,
            ray_batch: 512,
            samples_per_ray: 64,
            anchors_per_iter: 64,
            patch_size: 16,
            patch_stride: 4,
            patch_interpolated_fraction: 0.5,
            learning_rate: 1e-3,
            plane_learning_rate: 1e-2,
            weight_decay: 0.0,
            seed: 0,
            loss_weights: LossWeights::default(),
            near: 1e-3,
            far: 1e6,
            occupancy: false,
            occupancy_resolution: 32,
            occupancy_threshold: 0.01,
            occupancy_every: 100,
            eval_every: 500,
            checkpoint_every: 500,
            rays_per_task: 256,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn depth_stage_iters(&self) -> usize {
        self.depth_stage_iters.unwrap_or(self.total_iters / 3)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let positive = [
            ("ray_batch", self.ray_batch),
            ("anchors_per_iter", self.anchors_per_iter),
            ("patch_stride", self.patch_stride),
            ("occupancy_resolution", self.occupancy_resolution),
            ("occupancy_every", self.occupancy_every),
            ("rays_per_task", self.rays_per_task),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.samples_per_ray < 2 {
            return Err(Error::invalid("samples_per_ray must be at least 2"));
        }
        if self.patch_size < 2 {
            return Err(Error::invalid("patch_size must be at least 2"));
        }
        if self.depth_stage_iters() > self.total_iters {
            return Err(Error::invalid("depth_stage_iters exceeds total_iters"));
        }
        if !(0.0..=1.0).contains(&self.patch_interpolated_fraction) {
            return Err(Error::invalid("patch_interpolated_fraction must lie in [0, 1]"));
        }
        let rates = [
            ("learning_rate", self.learning_rate),
            ("plane_learning_rate", self.plane_learning_rate),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        let w = &self.loss_weights;
        if !(w.depth.is_finite() && w.depth >= 0.0 && w.smooth.is_finite() && w.smooth >= 0.0) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if !(self.near >= 0.0 && self.far > self.near) {
            return Err(Error::invalid("need 0 <= near < far"));
        }
        if !(self.occupancy_threshold >= 0.0) {
            return Err(Error::invalid("occupancy_threshold must be non-negative"));
        }
        Ok(())
    }
}
