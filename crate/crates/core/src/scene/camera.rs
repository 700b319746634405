use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::raster::RgbImage;
use crate::{Mat3, Vec3};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center, horizontal field of view in degrees.
    pub fn from_fov(width: usize, height: usize, fov_deg: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * fov_deg.to_radians()).tan();
        Self { fx: f, fy: f, cx: 0.5 * (width as f64 - 1.0), cy: 0.5 * (height as f64 - 1.0) }
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Mat3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// A posed pinhole camera with optional rendered image and ray-distance depth.
///
/// The pose maps world to camera coordinates, `x_cam = R x_world + t`; the
/// camera looks along `+z` with `y` pointing down the image.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub id: u32,
    pub intrinsics: Intrinsics,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
    pub image: Option<RgbImage>,
    /// Distance along the unit pixel ray to the first hit, 0 for a miss.
    pub depth: Option<Vec<f32>>,
}

impl CameraView {
    pub fn new(id: u32, intrinsics: Intrinsics, rotation: Mat3, translation: Vec3, width: usize, height: usize) -> Self {
        Self { id, intrinsics, rotation, translation, width, height, image: None, depth: None }
    }

    /// Camera at `eye` looking at `target`. Falls back to another up vector
    /// when the viewing direction is parallel to `up`.
    pub fn look_at(id: u32, eye: Vec3, target: Vec3, up: Vec3, intrinsics: Intrinsics, width: usize, height: usize) -> Self {
        let z = (target - eye).normalize();
        let mut x = z.cross(&up);
        if x.norm() < 1e-9 {
            x = z.cross(&Vec3::new(1.0, 0.0, 0.0));
            if x.norm() < 1e-9 {
                x = z.cross(&Vec3::new(0.0, 1.0, 0.0));
            }
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let t = -(r * eye);
        Self::new(id, intrinsics, r, t, width, height)
    }

    /// Checks rotation orthonormality and intrinsics ranges.
    pub fn validate(&self) -> Result<(), String> {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
        if ortho > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(format!("camera {}: rotation is not a proper rotation", self.id));
        }
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(format!("camera {}: focal lengths must be > 0", self.id));
        }
        if !(k.cx >= 0.0 && k.cx < self.width as f64 && k.cy >= 0.0 && k.cy < self.height as f64) {
            return Err(format!("camera {}: principal point outside image", self.id));
        }
        if let Some(img) = &self.image {
            if img.width != self.width || img.height != self.height {
                return Err(format!("camera {}: image size mismatch", self.id));
            }
        }
        if let Some(d) = &self.depth {
            if d.len() != self.width * self.height {
                return Err(format!("camera {}: depth size mismatch", self.id));
            }
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Pixel coordinates and camera-frame depth `z`; `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(Vector2<f64>, f64)> {
        let c = self.to_camera(p);
        if c.z <= 1e-12 {
            return None;
        }
        let k = &self.intrinsics;
        Some((Vector2::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy), c.z))
    }

    /// Unit world-space ray through pixel coordinates `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> (Vec3, Vec3) {
        let k = &self.intrinsics;
        let d_cam = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0).normalize();
        (self.center(), self.rotation.transpose() * d_cam)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Forward (optical axis) direction in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }
}

/// Directions on the unit sphere from a Fibonacci lattice.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// `count` cameras on a sphere of `distance` around `target`, all looking at it.
pub fn ring_rig(count: usize, target: Vec3, distance: f64, width: usize, height: usize, fov_deg: f64) -> Vec<CameraView> {
    let k = Intrinsics::from_fov(width, height, fov_deg);
    fibonacci_sphere(count)
        .into_iter()
        .enumerate()
        .map(|(i, d)| CameraView::look_at(i as u32, target + d * distance, target, Vec3::new(0.0, 0.0, 1.0), k, width, height))
        .collect()
}
