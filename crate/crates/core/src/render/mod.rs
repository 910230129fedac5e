//! Ray sampling, compositing, patches and empty-space skipping.

pub mod occupancy;
pub mod patch;
pub mod rays;
pub mod sampling;

pub use occupancy::{occupancy_grid_update, OccupancyGrid};
pub use patch::{render_patch, PatchRender, PatchSpec};
pub use rays::{render_rays, render_rays_eval, render_view, BatchRender, RayQuery, RayResult, RenderSettings, RenderedView, Shading};
pub use sampling::{composite, stratified_sample, RaySamples, RenderOutput};
