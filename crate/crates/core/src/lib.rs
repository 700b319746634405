//! Geometric uncertainty for signed-distance surface reconstructions.
//!
//! The crate measures how well a reconstructed surface agrees with a set of
//! posed images through patch-based multi-view photometric consistency,
//! distills that signal into a continuous trilinear uncertainty field, removes
//! view-dependent shading with a spherical-harmonic lobe fit, evaluates
//! the result with sparsification metrics and uses it to pick next-best views.
//!
//! Everything runs on synthetic scenes with exact ground truth:
//!
//! * [`scene`] builds analytic and voxel SDFs, renders views, injects
//!   reconstruction error and fuses depth maps.
//! * [`surface`] finds ray–surface intersections.
//! * [`consistency`] turns surface points into pseudo labels.
//! * [`decouple`] separates view-dependent radiance.
//! * [`uncertainty`] holds the distilled field and its training loops.
//! * [`eval`] implements AUSE, chamfer distance and friends.
//! * [`nbv`] runs uncertainty-guided incremental reconstruction.

pub mod config;
pub mod consistency;
pub mod decouple;
pub mod eval;
pub mod grid;
pub mod nbv;
pub mod scene;
pub mod surface;
pub mod uncertainty;

pub mod commands;
pub mod raster;

pub use nalgebra::{Matrix3, Vector3};

/// 3-vector in scene units.
pub type Vec3 = Vector3<f64>;
/// 3×3 matrix.
pub type Mat3 = Matrix3<f64>;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    /// Cube centered at `center` with half side `half`.
    pub fn cube(center: Vec3, half: f64) -> Self {
        let h = Vec3::repeat(half);
        Self { min: center - h, max: center + h }
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i] < self.max[i] && self.min[i].is_finite() && self.max[i].is_finite())
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        Vec3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        0.5 * (self.min + self.max)
    }
}

/// Bounding sphere of the object; also acts as the region of interest.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundingSphere {
    pub center: Vec3,
    pub radius: f64,
}

impl BoundingSphere {
    /// Parametric interval `[t_near, t_far]` where `origin + t*dir` lies inside
    /// the sphere, clipped to `t >= 0`. `dir` must be unit length.
    pub fn ray_interval(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let oc = origin - self.center;
        let b = oc.dot(dir);
        let c = oc.norm_squared() - self.radius * self.radius;
        let disc = b * b - c;
        if disc <= 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let t0 = (-b - s).max(0.0);
        let t1 = -b + s;
        (t1 > t0).then_some((t0, t1))
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }
}
