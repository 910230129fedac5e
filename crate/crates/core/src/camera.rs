//! Pinhole cameras with world-to-camera extrinsics.
//!
//! Camera frame convention: +x right, +y down, +z forward. Pixel `(u, v)`
//! covers `[u, u+1) x [v, v+1)`, so its center is at `(u + 0.5, v + 0.5)`.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const ORTHO_TOL: f64 = 1e-9;
/// Points with camera depth at or below this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Image-plane coordinates of a camera-frame point, or [`Projection::Behind`].
    pub fn project(&self, p_cam: &Vec3) -> Projection {
        let z = p_cam.z;
        if z <= MIN_DEPTH {
            return Projection::Behind;
        }
        Projection::Visible {
            u: self.fx * p_cam.x / z + self.cx,
            v: self.fy * p_cam.y / z + self.cy,
            depth: z,
        }
    }

    /// Camera-frame direction (z = 1) through image-plane point `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Result of projecting a camera-frame point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    Visible { u: f64, v: f64, depth: f64 },
    Behind,
}

/// World-to-camera rigid transform `p_cam = R p_world + T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extrinsics {
    rotation: Mat3,
    translation: Vec3,
}

impl Extrinsics {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        if ortho > ORTHO_TOL {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (max |R^T R - I| = {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::invalid(format!("rotation determinant is {det}, expected 1")));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("translation is not finite"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Row-major 3x4 `[R | T]`.
    pub fn from_row_major(m: &[f64; 12]) -> Result<Self> {
        let r = Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let t = Vec3::new(m[3], m[7], m[11]);
        Self::new(r, t)
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    /// Camera looking from `eye` towards `target`; `up` fixes the roll
    /// (image +y points away from `up`).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("eye and target coincide"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("up is parallel to the viewing direction"))?;
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(rotation, translation)
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn camera_to_world(&self, p_cam: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p_cam - self.translation)
    }

    /// Camera center in world coordinates, `-R^T T`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Linear interpolation of centers and spherical interpolation of
    /// orientations, `s` in `[0, 1]`.
    pub fn interpolate(&self, other: &Extrinsics, s: f64) -> Result<Self> {
        let qa = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation));
        let qb = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(other.rotation));
        let q = qa
            .try_slerp(&qb, s, 1e-12)
            .unwrap_or(if s < 0.5 { qa } else { qb });
        let rotation = *q.to_rotation_matrix().matrix();
        let center = self.center() * (1.0 - s) + other.center() * s;
        let translation = -(rotation * center);
        Self::new(rotation, translation)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
}

/// A ray with unit direction and a positive parameter interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, t_near: f64, t_far: f64) -> Result<Self> {
        if ((direction.norm() - 1.0).abs()) > 1e-12 {
            return Err(Error::invalid("ray direction must be unit length"));
        }
        if !(t_near > 0.0 && t_near < t_far) {
            return Err(Error::invalid(format!(
                "ray bounds must satisfy 0 < t_near < t_far (got {t_near}, {t_far})"
            )));
        }
        Ok(Self {
            origin,
            direction,
            t_near,
            t_far,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, extrinsics: Extrinsics) -> Self {
        Self {
            intrinsics,
            extrinsics,
        }
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn center(&self) -> Vec3 {
        self.extrinsics.center()
    }

    /// Origin and unit direction of the ray through continuous image-plane
    /// point `(u, v)`.
    pub fn ray_through(&self, u: f64, v: f64) -> (Vec3, Vec3) {
        let d_cam = self.intrinsics.unproject(u, v);
        let d = (self.extrinsics.rotation().transpose() * d_cam).normalize();
        (self.center(), d)
    }

    /// Ray through the center of pixel `(u, v)`.
    pub fn generate_ray(&self, u: usize, v: usize, bounds: (f64, f64)) -> Result<Ray> {
        if u >= self.width() || v >= self.height() {
            return Err(Error::invalid(format!(
                "pixel ({u}, {v}) outside {}x{} image",
                self.width(),
                self.height()
            )));
        }
        let (o, d) = self.ray_through(u as f64 + 0.5, v as f64 + 0.5);
        Ray::new(o, d, bounds.0, bounds.1)
    }

    /// Camera-frame z component of a world direction; converts ray distance
    /// to camera depth.
    pub fn depth_per_unit_t(&self, direction: &Vec3) -> f64 {
        (self.extrinsics.rotation() * direction).z
    }

    pub fn project_world(&self, x: &Vec3) -> Projection {
        self.intrinsics.project(&self.extrinsics.world_to_camera(x))
    }

    /// Image-plane position of `x` when it lands in front of the camera and
    /// inside the image rectangle; `None` otherwise.
    pub fn project_to_reference(&self, x: &Vec3) -> Option<(f64, f64)> {
        match self.project_world(x) {
            Projection::Behind => None,
            Projection::Visible { u, v, .. } => {
                let inside = u >= 0.0 && u < self.width() as f64 && v >= 0.0 && v < self.height() as f64;
                inside.then_some((u, v))
            }
        }
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if !(0..3).all(|i| min[i] < max[i]) {
            return Err(Error::invalid(format!(
                "bbox min {min:?} must be below max {max:?} componentwise"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    /// Length of the diagonal.
    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Affine map of the box onto `[-1, 1]^3`.
    pub fn normalize(&self, p: &Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| 2.0 * (p[i] - self.min[i]) / (self.max[i] - self.min[i]) - 1.0)
    }

    /// Inverse of [`Aabb::normalize`].
    pub fn denormalize(&self, q: &Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| self.min[i] + (q[i] + 1.0) * 0.5 * (self.max[i] - self.min[i]))
    }

    /// Slab intersection; returns the entry/exit parameters when the ray
    /// overlaps the box for positive `t`.
    pub fn intersect(&self, origin: &Vec3, direction: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            let d = direction[i];
            if d.abs() < 1e-300 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let a = (self.min[i] - origin[i]) / d;
            let b = (self.max[i] - origin[i]) / d;
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t1 > t0.max(0.0)).then_some((t0, t1))
    }

    /// Ray interval inside the box, clamped to the global `[near, far]`.
    pub fn ray_bounds(&self, origin: &Vec3, direction: &Vec3, near: f64, far: f64) -> Option<(f64, f64)> {
        let (t0, t1) = self.intersect(origin, direction)?;
        let lo = t0.max(near);
        let hi = t1.min(far);
        (hi - lo > 1e-9).then_some((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let angle = rng.random_range(-3.0..3.0);
        *Rotation3::from_scaled_axis(axis.normalize() * angle).matrix()
    }

    #[test]
    fn identity_extrinsics() {
        let e = Extrinsics::identity();
        assert_eq!(e.world_to_camera(&Vec3::new(1.0, 2.0, 3.0)), Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn translation_only() {
        let e = Extrinsics::new(Mat3::identity(), Vec3::new(0.0, 0.0, -5.0)).unwrap();
        assert_eq!(e.world_to_camera(&Vec3::new(0.0, 0.0, 5.0)), Vec3::zeros());
    }

    #[test]
    fn rotation_about_z() {
        let r = *Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2).matrix();
        let e = Extrinsics::new(r, Vec3::zeros()).unwrap();
        let p = e.world_to_camera(&Vec3::new(1.0, 0.0, 0.0));
        assert!((p - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let mut r = Mat3::identity();
        r[(0, 0)] = 1.01;
        assert!(Extrinsics::new(r, Vec3::zeros()).is_err());
        let reflect = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(Extrinsics::new(reflect, Vec3::zeros()).is_err());
    }

    #[test]
    fn projection_examples() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).unwrap();
        assert_eq!(
            k.project(&Vec3::new(0.0, 0.0, 1.0)),
            Projection::Visible { u: 0.0, v: 0.0, depth: 1.0 }
        );
        let k = Intrinsics::new(100.0, 100.0, 256.0, 256.0, 512, 512).unwrap();
        assert_eq!(
            k.project(&Vec3::new(1.0, 1.0, 2.0)),
            Projection::Visible { u: 306.0, v: 306.0, depth: 2.0 }
        );
        assert_eq!(k.project(&Vec3::new(0.0, 0.0, -1.0)), Projection::Behind);
        assert_eq!(k.project(&Vec3::new(0.0, 0.0, 0.0)), Projection::Behind);
    }

    #[test]
    fn center_pixel_looks_down_the_axis() {
        let k = Intrinsics::new(50.0, 50.0, 32.0, 32.0, 64, 64).unwrap();
        let cam = Camera::new(k, Extrinsics::identity());
        // pixel 31 has its center at 31.5; use a principal point on a pixel center.
        let k2 = Intrinsics::new(50.0, 50.0, 31.5, 31.5, 64, 64).unwrap();
        let cam2 = Camera::new(k2, Extrinsics::identity());
        let ray = cam2.generate_ray(31, 31, (0.1, 10.0)).unwrap();
        assert!((ray.direction - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        let a = cam.generate_ray(10, 10, (0.1, 10.0)).unwrap();
        let b = cam.generate_ray(11, 10, (0.1, 10.0)).unwrap();
        assert!(a.direction.angle(&b.direction) > 0.0);
    }

    #[test]
    fn pixel_out_of_range_is_an_error() {
        let k = Intrinsics::new(50.0, 50.0, 32.0, 32.0, 64, 64).unwrap();
        let cam = Camera::new(k, Extrinsics::identity());
        assert!(cam.generate_ray(64, 0, (0.1, 1.0)).is_err());
        assert!(cam.generate_ray(0, 64, (0.1, 1.0)).is_err());
    }

    #[test]
    fn generate_then_project_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let k = Intrinsics::new(
                rng.random_range(30.0..200.0),
                rng.random_range(30.0..200.0),
                rng.random_range(10.0..50.0),
                rng.random_range(10.0..50.0),
                64,
                64,
            )
            .unwrap();
            let r = random_rotation(&mut rng);
            let t = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let cam = Camera::new(k, Extrinsics::new(r, t).unwrap());
            let (u, v) = (rng.random_range(0..64), rng.random_range(0..64));
            let ray = cam.generate_ray(u, v, (0.1, 20.0)).unwrap();
            let depth = rng.random_range(0.2..20.0);
            match cam.project_world(&ray.at(depth)) {
                Projection::Visible { u: pu, v: pv, .. } => {
                    worst = worst.max((pu - (u as f64 + 0.5)).abs()).max((pv - (v as f64 + 0.5)).abs());
                }
                Projection::Behind => panic!("point on the ray is behind the camera"),
            }
        }
        assert!(worst <= 1e-9, "worst round-trip error {worst:e}");
    }

    #[test]
    fn world_camera_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let e = Extrinsics::new(
                random_rotation(&mut rng),
                Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
            )
            .unwrap();
            let p = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            assert!((e.camera_to_world(&e.world_to_camera(&p)) - p).norm() < 1e-12);
        }
    }

    #[test]
    fn reference_projection_outside_cases() {
        let k = Intrinsics::new(50.0, 50.0, 32.0, 32.0, 64, 64).unwrap();
        let cam = Camera::new(k, Extrinsics::identity());
        assert_eq!(cam.project_to_reference(&Vec3::new(0.0, 0.0, -2.0)), None);
        // u = 50 * x / z + 32 = 64 + 10
        assert_eq!(cam.project_to_reference(&Vec3::new(0.84, 0.0, 1.0)), None);
        let ray = cam.generate_ray(7, 40, (0.1, 10.0)).unwrap();
        let (u, v) = cam.project_to_reference(&ray.at(3.3)).unwrap();
        assert!((u - 7.5).abs() < 1e-9 && (v - 40.5).abs() < 1e-9);
    }

    #[test]
    fn look_at_points_forward() {
        let e = Extrinsics::look_at(Vec3::new(0.0, 0.0, 5.0), Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0)).unwrap();
        let p = e.world_to_camera(&Vec3::zeros());
        assert!((p - Vec3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
        assert!((e.center() - Vec3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
    }

    #[test]
    fn interpolation_endpoints() {
        let a = Extrinsics::look_at(Vec3::new(3.0, 0.0, 3.0), Vec3::zeros(), Vec3::z()).unwrap();
        let b = Extrinsics::look_at(Vec3::new(0.0, 3.0, 3.0), Vec3::zeros(), Vec3::z()).unwrap();
        let m0 = a.interpolate(&b, 0.0).unwrap();
        let m1 = a.interpolate(&b, 1.0).unwrap();
        assert!((m0.center() - a.center()).norm() < 1e-12);
        assert!((m1.center() - b.center()).norm() < 1e-12);
        let mid = a.interpolate(&b, 0.5).unwrap();
        assert!((mid.center() - Vec3::new(1.5, 1.5, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn bbox_intersection() {
        let b = Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let (t0, t1) = b.intersect(&Vec3::new(0.0, 0.0, 5.0), &Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert!((t0 - 4.0).abs() < 1e-12 && (t1 - 6.0).abs() < 1e-12);
        assert!(b.intersect(&Vec3::new(3.0, 0.0, 5.0), &Vec3::new(0.0, 0.0, -1.0)).is_none());
        assert_eq!(b.ray_bounds(&Vec3::new(0.0, 0.0, 5.0), &Vec3::new(0.0, 0.0, -1.0), 4.5, 5.5), Some((4.5, 5.5)));
        let q = b.normalize(&Vec3::new(1.0, -1.0, 0.0));
        assert_eq!(q, Vec3::new(1.0, -1.0, 0.0));
    }
}
