//! Hybrid radiance fields for few-shot novel view synthesis: an explicit
//! triplane carries color features while an MLP density field, conditioned on
//! features projected from the input views, carries geometry. Training mixes a
//! photometric loss with point-cloud depth anchors early on and edge-aware
//! disparity smoothness later.

pub mod error;
pub mod field;
pub mod camera;
pub mod math;
pub mod metrics;
pub mod render;
pub mod scene;
pub mod supervision;
pub mod train;

pub use error::{Error, Result};
