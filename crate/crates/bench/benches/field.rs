use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use tridf::math::Tape;
use tridf::render::{occupancy_grid_update, render_rays, render_rays_eval, RenderSettings, Shading};
use tridf::supervision::color_loss;
use tridf::math::Tensor;
use tridf_bench::{fixture, rays};

fn training_batch(c: &mut Criterion) {
    let (scene, model) = fixture();
    let rays = rays(&scene, 256);
    let gt = Tensor::matrix(rays.len(), 3, vec![0.5; rays.len() * 3]).unwrap();
    let settings = RenderSettings::default();
    c.bench_function("forward_backward_256_rays", |b| {
        b.iter_batched(
            Tape::new,
            |mut tape| {
                let bound = model.bind(&mut tape).unwrap();
                let out = render_rays(&model, &mut tape, &bound, &rays, &settings, None, None, Shading::Full).unwrap();
                let rgb = tape.slice_cols(out.output, 0, 3).unwrap();
                let loss = color_loss(&mut tape, rgb, &gt).unwrap();
                tape.backward(loss).unwrap()
            },
            BatchSize::LargeInput,
        )
    });
}

fn eval_render(c: &mut Criterion) {
    let (scene, model) = fixture();
    let rays = rays(&scene, 1024);
    let settings = RenderSettings::default();
    c.bench_function("eval_render_1024_rays", |b| {
        b.iter(|| render_rays_eval(&model, &rays, &settings, None, 1).unwrap())
    });
    c.bench_function("occupancy_update_32", |b| {
        b.iter(|| occupancy_grid_update(&model, 32, 0.01).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = training_batch, eval_render
}
criterion_main!(benches);
