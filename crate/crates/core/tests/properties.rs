use std::f64::consts::PI;

use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tridf::camera::{Camera, Extrinsics, Intrinsics, Mat3, Projection, Vec3};
use tridf::field::Triplane;
use tridf::math::volume::composite_ray;
use tridf::math::{ParamStore, Tape, Tensor};
use tridf::metrics::{psnr, ssim};
use tridf::scene::Image;
use tridf::supervision::adaptive_weight;
use tridf::supervision::losses::{color_loss_values, depth_loss_values, smoothness_loss_values};
use tridf::supervision::{LossWeights, Stage};

fn rotation(axis: (f64, f64, f64), angle: f64) -> Mat3 {
    let axis = Unit::new_normalize(Vec3::new(axis.0, axis.1, axis.2));
    Rotation3::from_axis_angle(&axis, angle).into_inner()
}

fn axis() -> impl Strategy<Value = (f64, f64, f64)> {
    (-1.0..1.0f64, -1.0..1.0f64, 0.1..1.0f64)
}

fn image(w: usize, h: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0..1.0f64, w * h * 3).prop_map(move |d| Image::new(w, h, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ray_projection_round_trip(
        ax in axis(), angle in -PI..PI,
        t in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64),
        f in 20.0..200.0f64,
        u in 0usize..64, v in 0usize..48,
        depth in 0.1..50.0f64,
    ) {
        let k = Intrinsics::new(f, f * 1.1, 31.7, 23.2, 64, 48).unwrap();
        let e = Extrinsics::new(rotation(ax, angle), Vec3::new(t.0, t.1, t.2)).unwrap();
        let cam = Camera::new(k, e);
        let ray = cam.generate_ray(u, v, (1e-3, 100.0)).unwrap();
        prop_assert!((ray.direction.norm() - 1.0).abs() < 1e-12);
        match cam.project_world(&ray.at(depth)) {
            Projection::Visible { u: pu, v: pv, .. } => {
                prop_assert!((pu - (u as f64 + 0.5)).abs() <= 1e-9);
                prop_assert!((pv - (v as f64 + 0.5)).abs() <= 1e-9);
            }
            Projection::Behind => prop_assert!(false, "point along the ray is behind the camera"),
        }
    }

    #[test]
    fn world_camera_round_trip(
        ax in axis(), angle in -PI..PI,
        t in (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64),
        p in (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64),
    ) {
        let e = Extrinsics::new(rotation(ax, angle), Vec3::new(t.0, t.1, t.2)).unwrap();
        let p = Vec3::new(p.0, p.1, p.2);
        let back = e.camera_to_world(&e.world_to_camera(&p));
        prop_assert!((back - p).norm() <= 1e-12 * (1.0 + p.norm()) * 10.0);
    }

    #[test]
    fn weights_and_residual_partition_unity(
        samples in prop::collection::vec((0.0..20.0f64, 0.001..0.5f64), 1..64),
    ) {
        let sig: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let del: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let mut ts = Vec::new();
        let mut t = 0.1;
        for d in &del {
            ts.push(t + 0.5 * d);
            t += d;
        }
        let t_far = t;
        let colors = vec![0.5; 3 * sig.len()];
        let out = composite_ray(&sig, &colors, &del, &ts, [0.7; 3]);
        let total: f64 = out.weights.iter().sum::<f64>() + out.residual;
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(out.depth >= 0.0 && out.depth <= t_far);
        prop_assert!(out.depth <= out.opacity * t_far + 1e-12);
    }

    #[test]
    fn triplane_is_linear_in_plane_values(
        scale in -3.0..3.0f64,
        pts in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..8),
        seed in 0u64..1000,
    ) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tri = Triplane::new(&mut store, 6, 3, 0.5, &mut rng);
        let x: Vec<[f64; 3]> = pts.iter().map(|p| [p.0, p.1, p.2]).collect();
        let eval = |s: &ParamStore| {
            let mut tape = Tape::new();
            let bound: Vec<_> = s.ids().map(|id| tape.param_from(s, id).unwrap()).collect();
            let out = tri.sample_points(&mut tape, &bound, &x).unwrap();
            tape.value(out).data().to_vec()
        };
        let base = eval(&store);
        let mut scaled = store.clone();
        for id in store.ids() {
            *scaled.get_mut(id) = store.get(id).map(|v| v * scale);
        }
        for (a, b) in eval(&scaled).iter().zip(&base) {
            prop_assert!((a - scale * b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn adaptive_weight_is_bounded_and_monotone(e1 in 0.0..1.5f64, e2 in 0.0..1.5f64, d in 0.0..0.5f64) {
        let w = adaptive_weight(e1, e2);
        prop_assert!((0.0..=1.0).contains(&w));
        if e1 + e2 + d <= 1.0 {
            prop_assert!(adaptive_weight(e1, e2 + d) <= w);
        }
    }

    #[test]
    fn zero_weights_give_zero_depth_loss(
        pairs in prop::collection::vec((0.0..10.0f64, 0.0..10.0f64), 1..32),
    ) {
        let pred: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let target: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let w = vec![0.0; pairs.len()];
        prop_assert_eq!(depth_loss_values(&pred, &target, &w).unwrap(), 0.0);
    }

    #[test]
    fn smoothness_ignores_disparity_offset(
        disp in prop::collection::vec(0.0..2.0f64, 16),
        rgb in prop::collection::vec(0.0..1.0f64, 48),
        offset in -1.0..1.0f64,
    ) {
        let a = smoothness_loss_values(&disp, &rgb, 4).unwrap();
        let shifted: Vec<f64> = disp.iter().map(|d| d + offset).collect();
        let b = smoothness_loss_values(&shifted, &rgb, 4).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn color_loss_scales_quadratically(
        pg in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 3..30),
        alpha in 0.0..1.0f64,
    ) {
        let n = pg.len() / 3 * 3;
        let p: Vec<f64> = pg[..n].iter().map(|x| x.0).collect();
        let g: Vec<f64> = pg[..n].iter().map(|x| x.1).collect();
        let mixed: Vec<f64> = p.iter().zip(&g).map(|(p, g)| alpha * p + (1.0 - alpha) * g).collect();
        let full = color_loss_values(&p, &g).unwrap();
        let part = color_loss_values(&mixed, &g).unwrap();
        prop_assert!((part - alpha * alpha * full).abs() <= 1e-12);
    }

    #[test]
    fn schedule_follows_the_stage_boundary(iter in 0usize..5000, boundary in 0usize..5000) {
        let (l1, l2) = LossWeights::default().lambdas(Stage::at(iter, boundary));
        let early = iter < boundary;
        prop_assert_eq!(l1, if early { 0.001 } else { 0.0 });
        prop_assert_eq!(l2, if early { 0.0 } else { 1.0 });
    }

    #[test]
    fn psnr_is_symmetric((a, b) in (image(5, 4), image(5, 4))) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_of_an_image_with_itself_is_one(a in image(13, 12)) {
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
    }

    /// For images periodic along x whose window count is a whole number of
    /// periods, shifting the pair together leaves the window set unchanged.
    #[test]
    fn ssim_is_invariant_to_joint_shift(
        (ta, tb) in (image(3, 12), image(3, 12)),
        shift in 1usize..3,
    ) {
        let (period, h) = (3, 12);
        let w = 2 * period + 10;
        let tile = |t: &Image, s: usize| {
            let mut out = Image::filled(w, h, [0.0; 3]);
            for y in 0..h {
                for x in 0..w {
                    out.set_pixel(x, y, t.pixel((x + s) % period, y));
                }
            }
            out
        };
        let base = ssim(&tile(&ta, 0), &tile(&tb, 0)).unwrap();
        let moved = ssim(&tile(&ta, shift), &tile(&tb, shift)).unwrap();
        prop_assert!((base - moved).abs() <= 1e-12);
    }
}

/// Backward of a sum equals the sum of backwards, and replaying a tape is
/// bit-exact.
#[test]
fn backward_is_linear_and_replayable() {
    let mut store = ParamStore::new();
    let a = store.add("a", "g", false, Tensor::matrix(2, 3, vec![0.3, -0.2, 0.9, 0.1, 0.5, -0.7]).unwrap());
    let b = store.add("b", "g", false, Tensor::matrix(3, 2, vec![0.4, 0.2, -0.6, 0.8, 0.05, 0.3]).unwrap());
    let run = |which: u8| {
        let mut t = Tape::new();
        let va = t.param_from(&store, a).unwrap();
        let vb = t.param_from(&store, b).unwrap();
        let m = t.matmul(va, vb).unwrap();
        let s = t.sigmoid(m).unwrap();
        let l1 = t.sum(s).unwrap();
        let q = t.square(va).unwrap();
        let l2 = t.mean(q).unwrap();
        let loss = match which {
            0 => l1,
            1 => l2,
            _ => t.add(l1, l2).unwrap(),
        };
        let value = t.value(loss).clone();
        (value, t.backward(loss).unwrap())
    };
    let (_, g1) = run(0);
    let (_, g2) = run(1);
    let (v, g) = run(2);
    for id in [a, b] {
        let sum: Vec<f64> = g1.get(id).unwrap().data().iter().zip(g2.get(id).unwrap().data()).map(|(x, y)| x + y).collect();
        for (x, y) in g.get(id).unwrap().data().iter().zip(&sum) {
            assert!((x - y).abs() <= 1e-15 * (1.0 + y.abs()) * 4.0);
        }
    }
    let (v2, g2) = run(2);
    assert_eq!(v, v2);
    assert_eq!(g, g2);
}

#[test]
fn sample_order_matters() {
    let sig = [0.5, 3.0, 0.1];
    let colors = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let del = [0.3, 0.2, 0.4];
    let ts = [1.0, 1.3, 1.5];
    let fwd = composite_ray(&sig, &colors, &del, &ts, [0.7; 3]);
    let rsig = [0.1, 3.0, 0.5];
    let rcol = [0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0];
    let rdel = [0.4, 0.2, 0.3];
    let rev = composite_ray(&rsig, &rcol, &rdel, &ts, [0.7; 3]);
    assert_ne!(fwd.color, rev.color);
}
