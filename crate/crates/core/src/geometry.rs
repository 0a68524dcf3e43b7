//! Pinhole cameras, rigid transforms, and the forward/backward projection
//! chain shared by the renderer and the label verifier.
//!
//! Conventions used everywhere in the crate:
//!
//! * camera frame is right-handed with `+x` right, `+y` down, `+z` forward;
//! * depth maps hold camera-frame z, not the Euclidean distance along the ray;
//! * continuous pixel coordinates put the center of cell `(i, j)` at
//!   `(i + 0.5, j + 0.5)`; "rounding" a continuous coordinate to a cell means
//!   picking the cell whose center is nearest, i.e. `floor`.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Smallest camera-frame z accepted by [`project_point`].
pub const MIN_DEPTH: f64 = 1e-9;

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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
        if !(fx > 0.0 && fy > 0.0) {
            return Err(domain(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        if width == 0 || height == 0 {
            return Err(domain("image size must be positive"));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(domain(format!("principal point ({cx}, {cy}) outside {width}x{height}")));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Square-pixel camera with the principal point at the image center and
    /// the given horizontal field of view.
    pub fn from_fov(width: usize, height: usize, fov_x_deg: f64) -> Result<Self> {
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height)
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains(&self, p: Pixel) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u < self.width as f64 && p.v < self.height as f64
    }

    /// Cell containing a continuous coordinate, if it lies inside the image.
    pub fn cell_of(&self, p: Pixel) -> Option<(usize, usize)> {
        if self.contains(p) {
            Some((p.u.floor() as usize, p.v.floor() as usize))
        } else {
            None
        }
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Rigid transform. For camera poses this is camera-to-world:
/// `x_world = rotation * x_cam + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Mat3::identity()).norm();
        if !ortho.is_finite() || ortho > ORTHO_TOL {
            return Err(domain(format!("rotation is not orthonormal (error {ortho:e})")));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(domain(format!("rotation determinant is {det}, expected +1")));
        }
        if !translation.iter().all(|t| t.is_finite()) {
            return Err(Error::Numeric("non-finite translation".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self { rotation: Mat3::identity(), translation: t }
    }

    /// Camera at `eye` looking at `target`, with image `+y` aligned as well as
    /// possible with `down`.
    pub fn look_at(eye: Vec3, target: Vec3, down: Vec3) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| domain("look_at: eye and target coincide"))?;
        let right = down
            .cross(&forward)
            .try_normalize(1e-12)
            .ok_or_else(|| domain("look_at: down is parallel to the viewing direction"))?;
        let down = forward.cross(&right);
        let rotation = Mat3::from_columns(&[right, down, forward]);
        Self::new(rotation, eye)
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self { rotation: q.to_rotation_matrix().into_inner(), translation }
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    /// Row-major 3x4 `[R | t]`.
    pub fn to_rows(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rotation[(r, c)];
            }
            out[r * 4 + 3] = self.translation[r];
        }
        out
    }

    pub fn from_rows(rows: &[f64]) -> Result<Self> {
        if rows.len() != 12 {
            return Err(domain(format!("pose needs 12 values, got {}", rows.len())));
        }
        let rotation = Mat3::from_fn(|r, c| rows[r * 4 + c]);
        let translation = Vec3::new(rows[3], rows[7], rows[11]);
        Self::new(rotation, translation)
    }

    /// Re-orthonormalize after accumulated floating point drift.
    pub fn orthonormalized(&self) -> Self {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        Self::from_quaternion(q, self.translation)
    }
}

/// Poses serialize as their row-major 3x4 matrix.
impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<f64>::deserialize(d)?;
        Pose::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
    /// Camera-frame z gained per unit of ray parameter (cosine to the optical
    /// axis of the camera that cast the ray). Converts sample `t` to z-depth.
    pub z_per_t: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    pub fn with_bounds(mut self, t_near: f64, t_far: f64) -> Self {
        self.t_near = t_near;
        self.t_far = t_far;
        self
    }

    /// z-depth of the far bound.
    pub fn z_far(&self) -> f64 {
        self.t_far * self.z_per_t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Continuous coordinate of the center of cell `(i, j)`.
    pub fn center(i: usize, j: usize) -> Self {
        Self { u: i as f64 + 0.5, v: j as f64 + 0.5 }
    }
}

/// Ray through the center of the cell addressed by `pixel`.
///
/// The pixel coordinate is offset by half a cell, so the ray passes through
/// continuous coordinate `(u + 0.5, v + 0.5)`; [`project_point`] of any point
/// on it returns that coordinate. The center must lie within the image
/// rectangle (edges included).
pub fn ray_for_pixel(intrinsics: &Intrinsics, pose: &Pose, pixel: Pixel) -> Result<Ray> {
    let (cu, cv) = (pixel.u + 0.5, pixel.v + 0.5);
    let inside = (0.0..=intrinsics.width as f64).contains(&cu)
        && (0.0..=intrinsics.height as f64).contains(&cv);
    if !inside {
        return Err(domain(format!(
            "pixel ({}, {}) outside {}x{} image",
            pixel.u, pixel.v, intrinsics.width, intrinsics.height
        )));
    }
    let cam = Vec3::new(
        (pixel.u + 0.5 - intrinsics.cx) / intrinsics.fx,
        (pixel.v + 0.5 - intrinsics.cy) / intrinsics.fy,
        1.0,
    );
    let cam = cam.normalize();
    Ok(Ray {
        origin: pose.translation,
        direction: pose.rotation * cam,
        t_near: 0.0,
        t_far: f64::INFINITY,
        z_per_t: cam.z,
    })
}

/// Transform taking points in the `src` camera frame to the `dst` camera frame.
pub fn relative_pose(src: &Pose, dst: &Pose) -> Pose {
    dst.inverse().compose(src)
}

/// Camera-frame point to continuous pixel coordinates and z-depth.
pub fn project_point(intrinsics: &Intrinsics, point_cam: &Vec3) -> Result<(Pixel, f64)> {
    let z = point_cam.z;
    if !(z > MIN_DEPTH) {
        return Err(Error::BehindCamera(z));
    }
    let u = intrinsics.fx * point_cam.x / z + intrinsics.cx;
    let v = intrinsics.fy * point_cam.y / z + intrinsics.cy;
    Ok((Pixel { u, v }, z))
}

/// `depth * K^-1 * (u, v, 1)`: lift a continuous pixel at z-depth `depth`.
pub fn back_project(intrinsics: &Intrinsics, pixel: Pixel, depth: f64) -> Result<Vec3> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(domain(format!("back_project needs positive depth, got {depth}")));
    }
    Ok(Vec3::new(
        depth * (pixel.u - intrinsics.cx) / intrinsics.fx,
        depth * (pixel.v - intrinsics.cy) / intrinsics.fy,
        depth,
    ))
}

/// Full chain `K T D(p) K^-1 p`: lift `pixel` from the `from` camera at
/// `depth`, move it into the `to` camera, and project. `None` when the point
/// lands behind the target camera.
pub fn transfer_pixel(
    intrinsics: &Intrinsics,
    from_to: &Pose,
    pixel: Pixel,
    depth: f64,
) -> Option<(Pixel, f64)> {
    let p = back_project(intrinsics, pixel, depth).ok()?;
    project_point(intrinsics, &from_to.transform_point(&p)).ok()
}
