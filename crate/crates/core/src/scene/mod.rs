//! Scene data: posed images, point clouds and synthetic ground-truth scenes.

pub mod dataset;
pub mod image;
pub mod pointcloud;
pub mod synth;

pub use dataset::{load_scene, save_scene, CameraEntry, SceneDataset, Split};
pub use image::Image;
pub use pointcloud::{load_point_cloud, PointCloud};
pub use synth::{oracle_render, synth_scene, SynthConfig, SyntheticScene};
