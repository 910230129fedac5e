use criterion::{criterion_group, criterion_main, Criterion};

use tridf::metrics::{psnr, ssim};
use tridf::scene::Image;

fn image(seed: u64) -> Image {
    // Cheap deterministic texture; the values only need to vary.
    let data = (0..256 * 256 * 3u64)
        .map(|i| ((i.wrapping_mul(2654435761).wrapping_add(seed) >> 7) % 1000) as f64 / 1000.0)
        .collect();
    Image::new(256, 256, data).unwrap()
}

fn metrics(c: &mut Criterion) {
    let (a, b) = (image(1), image(2));
    c.bench_function("psnr_256", |bench| bench.iter(|| psnr(&a, &b).unwrap()));
    c.bench_function("ssim_256", |bench| bench.iter(|| ssim(&a, &b).unwrap()));
}

criterion_group!(benches, metrics);
criterion_main!(benches);
