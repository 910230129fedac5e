//! Photometric, depth-anchor and smoothness supervision.

pub mod anchors;
pub mod losses;

pub use anchors::{adaptive_weight, build_anchors, color_error, KeypointAnchor};
pub use losses::{
    color_loss, depth_loss, smoothness_loss, total_loss, LossReport, LossWeights, Stage,
};
