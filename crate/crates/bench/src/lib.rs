//! Shared fixtures for the benchmarks.

use tridf::field::{ModelConfig, TriDF};
use tridf::render::RayQuery;
use tridf::scene::{synth_scene, SceneDataset, SynthConfig};

/// A 64x64 synthetic scene and a fresh model with narrow MLPs.
pub fn fixture() -> (SceneDataset, TriDF) {
    let (scene, _, _) = synth_scene(&SynthConfig::default()).expect("default synth config is valid");
    let config = ModelConfig {
        density_width: 64,
        base_width: 64,
        color_width: 64,
        reference_channels: 16,
        ..ModelConfig::default()
    };
    let model = TriDF::new(config, &scene, 0).expect("valid model config");
    (scene, model)
}

/// Rays through the first `n` pixels of training view 0, row-major.
pub fn rays(scene: &SceneDataset, n: usize) -> Vec<RayQuery> {
    let cam = &scene.cameras[scene.train_ids[0]];
    (0..n)
        .map(|i| {
            let (u, v) = (i % cam.width(), i / cam.width() % cam.height());
            RayQuery::through_pixel(cam, u as f64 + 0.5, v as f64 + 0.5)
        })
        .collect()
}
