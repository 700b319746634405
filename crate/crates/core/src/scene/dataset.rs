use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AnalyticSdf, CameraView, Intrinsics, SdfField, ShadingModel, VoxelSdf};
use crate::raster::{read_pfm, write_pfm, RgbImage};
use crate::{BoundingSphere, Mat3, Vec3};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing manifest: {0}")]
    MissingManifest(PathBuf),
    #[error("{path}: {reason}")]
    File { path: PathBuf, reason: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

fn file_err(path: &Path, reason: impl ToString) -> DatasetError {
    DatasetError::File { path: path.to_path_buf(), reason: reason.to_string() }
}

/// Ground-truth scene: geometry, appearance and the region of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDescription {
    pub sdf: AnalyticSdf,
    pub shading: ShadingModel,
    pub bounds: BoundingSphere,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub views: Vec<CameraView>,
    pub scene: SceneDescription,
    pub recon: VoxelSdf,
    /// Images with the view-dependent factor removed, one per view.
    pub decoupled: Option<Vec<RgbImage>>,
}

/// One entry of `cameras.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub id: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl From<&CameraView> for CameraRecord {
    fn from(c: &CameraView) -> Self {
        let m = &c.rotation;
        Self {
            id: c.id,
            fx: c.intrinsics.fx,
            fy: c.intrinsics.fy,
            cx: c.intrinsics.cx,
            cy: c.intrinsics.cy,
            width: c.width,
            height: c.height,
            r: [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            t: [c.translation.x, c.translation.y, c.translation.z],
        }
    }
}

impl CameraRecord {
    pub fn to_view(&self) -> CameraView {
        let r = Mat3::from_row_slice(&self.r);
        CameraView::new(
            self.id,
            Intrinsics { fx: self.fx, fy: self.fy, cx: self.cx, cy: self.cy },
            r,
            Vec3::from_column_slice(&self.t),
            self.width,
            self.height,
        )
    }
}

fn view_file(dir: &Path, sub: &str, id: u32, ext: &str) -> PathBuf {
    dir.join(sub).join(format!("view_{id:04}.{ext}"))
}

impl SceneDataset {
    /// Checks camera, frustum and depth-consistency invariants.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bounds = &self.scene.bounds;
        for v in &self.views {
            v.validate().map_err(DatasetError::Invalid)?;
            let to_center = bounds.center - v.center();
            let dist = to_center.norm();
            if dist > bounds.radius {
                // angle between the optical axis and the sphere center must fit the frustum plus the sphere's angular radius
                let k = &v.intrinsics;
                let half_fov = (0.5 * v.width as f64 / k.fx).atan().max((0.5 * v.height as f64 / k.fy).atan());
                let diag = (half_fov.tan() * std::f64::consts::SQRT_2).atan();
                let ang = (to_center / dist).dot(&v.forward()).clamp(-1.0, 1.0).acos();
                if ang > diag + (bounds.radius / dist).asin() {
                    return Err(DatasetError::Invalid(format!("camera {} frustum misses the bounding sphere", v.id)));
                }
            }
            if let Some(depth) = &v.depth {
                for (i, &d) in depth.iter().enumerate() {
                    if d > 0.0 {
                        let (o, dir) = v.pixel_ray((i % v.width) as f64, (i / v.width) as f64);
                        let r = self.scene.sdf.eval(&(o + dir * d as f64)).abs();
                        if r >= 1e-3 {
                            return Err(DatasetError::Invalid(format!("camera {}: depth at pixel {i} is off the surface by {r}", v.id)));
                        }
                    }
                }
            }
        }
        if let Some(dec) = &self.decoupled {
            if dec.len() != self.views.len() {
                return Err(DatasetError::Invalid("decoupled image count differs from view count".into()));
            }
        }
        Ok(())
    }

    pub fn view_index(&self, id: u32) -> Option<usize> {
        self.views.iter().position(|v| v.id == id)
    }

    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        for sub in ["images", "depth"] {
            std::fs::create_dir_all(dir.join(sub)).map_err(|e| file_err(&dir.join(sub), e))?;
        }
        let records: Vec<CameraRecord> = self.views.iter().map(CameraRecord::from).collect();
        let manifest = dir.join("cameras.json");
        let js = serde_json::to_string_pretty(&records).map_err(|e| file_err(&manifest, e))?;
        std::fs::write(&manifest, js).map_err(|e| file_err(&manifest, e))?;
        for v in &self.views {
            if let Some(img) = &v.image {
                let p = view_file(dir, "images", v.id, "png");
                img.save_png(&p).map_err(|e| file_err(&p, e))?;
            }
            if let Some(depth) = &v.depth {
                let p = view_file(dir, "depth", v.id, "pfm");
                write_pfm(&p, v.width, v.height, depth).map_err(|e| file_err(&p, e))?;
            }
        }
        let gt = dir.join("gt.sdfc");
        let js = serde_json::to_string_pretty(&self.scene).map_err(|e| file_err(&gt, e))?;
        std::fs::write(&gt, js).map_err(|e| file_err(&gt, e))?;
        self.recon.save(&dir.join("recon.sdfg")).map_err(|e| file_err(&dir.join("recon.sdfg"), e))?;
        if let Some(dec) = &self.decoupled {
            save_image_set(dir, "images_decoupled", &self.views, dec)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let manifest = dir.join("cameras.json");
        if !manifest.is_file() {
            return Err(DatasetError::MissingManifest(manifest));
        }
        let text = std::fs::read_to_string(&manifest).map_err(|e| file_err(&manifest, e))?;
        let records: Vec<CameraRecord> = serde_json::from_str(&text).map_err(|e| file_err(&manifest, e))?;
        let mut views = Vec::with_capacity(records.len());
        for r in &records {
            let mut v = r.to_view();
            let ip = view_file(dir, "images", v.id, "png");
            if ip.is_file() {
                let img = RgbImage::load_png(&ip).map_err(|e| file_err(&ip, e))?;
                if img.width != v.width || img.height != v.height {
                    return Err(file_err(&ip, "image size does not match camera"));
                }
                v.image = Some(img);
            }
            let dp = view_file(dir, "depth", v.id, "pfm");
            if dp.is_file() {
                let (w, h, d) = read_pfm(&dp).map_err(|e| file_err(&dp, e))?;
                if w != v.width || h != v.height {
                    return Err(file_err(&dp, "depth size does not match camera"));
                }
                v.depth = Some(d);
            }
            views.push(v);
        }
        let gt = dir.join("gt.sdfc");
        let text = std::fs::read_to_string(&gt).map_err(|e| file_err(&gt, e))?;
        let scene: SceneDescription = serde_json::from_str(&text).map_err(|e| file_err(&gt, e))?;
        let rp = dir.join("recon.sdfg");
        let recon = VoxelSdf::load(&rp).map_err(|e| file_err(&rp, e))?;
        let decoupled = if dir.join("images_decoupled").is_dir() { Some(load_image_set(dir, "images_decoupled", &views)?) } else { None };
        Ok(Self { views, scene, recon, decoupled })
    }
}

pub fn save_image_set(dir: &Path, sub: &str, views: &[CameraView], images: &[RgbImage]) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir.join(sub)).map_err(|e| file_err(&dir.join(sub), e))?;
    for (v, img) in views.iter().zip(images) {
        let p = view_file(dir, sub, v.id, "png");
        img.save_png(&p).map_err(|e| file_err(&p, e))?;
    }
    Ok(())
}

pub fn load_image_set(dir: &Path, sub: &str, views: &[CameraView]) -> Result<Vec<RgbImage>, DatasetError> {
    views
        .iter()
        .map(|v| {
            let p = view_file(dir, sub, v.id, "png");
            RgbImage::load_png(&p).map_err(|e| file_err(&p, e))
        })
        .collect()
}
