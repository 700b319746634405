//! Patch-based multi-view photometric consistency.
//!
//! A surface point is approximated by its tangent plane; the plane induces a
//! homography that carries a `K×K` pixel patch from the reference view into
//! each source view. Grayscale patches are compared with single-window SSIM,
//! the score is `1 − SSIM`, and the four lowest pair scores are averaged into
//! the point's pseudo label.

mod labels;

pub use labels::{
    generate_pseudo_labels, generate_pseudo_labels_cached, pixel_rays, LabelCache, write_labels_csv, IntersectMode, LabelParams, LabelStats, PseudoLabel, RaySample,
};

use thiserror::Error;

use crate::raster::{GrayImage, RgbImage};
use crate::scene::{CameraView, SdfField};
use crate::surface::{sphere_trace, Ray, SurfacePoint, TraceParams};
use crate::{Mat3, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum ConsistencyError {
    #[error("plane passes through the reference camera center (|d_ref| = {0:e})")]
    DegeneratePlane(f64),
}

pub fn to_gray(image: &RgbImage) -> GrayImage {
    image.to_gray()
}

/// `n·x + d = 0` through a surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentPlane {
    pub normal: Vec3,
    pub point: Vec3,
    pub d: f64,
    pub degenerate: bool,
}

pub fn tangent_plane(sp: &SurfacePoint) -> TangentPlane {
    TangentPlane { normal: sp.normal, point: sp.position, d: -sp.normal.dot(&sp.position), degenerate: sp.degenerate_normal }
}

/// Plane-induced homography from `reference` pixels to `source` pixels:
/// `H = K_src (R_rel − t_rel n_refᵀ / d_ref) K_ref⁻¹`, with the plane
/// expressed in reference camera coordinates.
pub fn homography(plane: &TangentPlane, reference: &CameraView, source: &CameraView) -> Result<Mat3, ConsistencyError> {
    let n_ref = reference.rotation * plane.normal;
    let p_ref = reference.to_camera(&plane.point);
    let d_ref = -n_ref.dot(&p_ref);
    if d_ref.abs() < 1e-9 {
        return Err(ConsistencyError::DegeneratePlane(d_ref));
    }
    let r_rel = source.rotation * reference.rotation.transpose();
    let t_rel = source.translation - r_rel * reference.translation;
    let m = r_rel - t_rel * n_ref.transpose() / d_ref;
    Ok(source.intrinsics.matrix() * m * reference.intrinsics.inverse_matrix())
}

/// `K×K` pixel coordinates with per-coordinate validity.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub size: usize,
    pub coords: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
}

impl PatchGrid {
    /// Axis-aligned grid with 1 px spacing centered on `(u, v)`, row-major.
    pub fn centered(u: f64, v: f64, size: usize, width: usize, height: usize) -> Self {
        assert!(size % 2 == 1, "patch size must be odd");
        let half = (size / 2) as f64;
        let mut coords = Vec::with_capacity(size * size);
        for r in 0..size {
            for c in 0..size {
                coords.push([u - half + c as f64, v - half + r as f64]);
            }
        }
        let valid = coords.iter().map(|p| in_bounds(p, width, height)).collect();
        Self { size, coords, valid }
    }

    pub fn center(&self) -> [f64; 2] {
        self.coords[self.coords.len() / 2]
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|v| **v).count() as f64 / self.valid.len() as f64
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|v| *v)
    }
}

#[inline]
fn in_bounds(p: &[f64; 2], width: usize, height: usize) -> bool {
    p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= (width - 1) as f64 && p[1] <= (height - 1) as f64
}

/// Applies `h` homogeneously. Coordinates whose homogeneous scale is below
/// `1e-12` (at infinity or behind the camera) or that fall outside the
/// target image are marked invalid.
pub fn warp_patch(h: &Mat3, patch: &PatchGrid, width: usize, height: usize) -> PatchGrid {
    let mut coords = Vec::with_capacity(patch.coords.len());
    let mut valid = Vec::with_capacity(patch.coords.len());
    for (p, ok) in patch.coords.iter().zip(&patch.valid) {
        let x = h[(0, 0)] * p[0] + h[(0, 1)] * p[1] + h[(0, 2)];
        let y = h[(1, 0)] * p[0] + h[(1, 1)] * p[1] + h[(1, 2)];
        let w = h[(2, 0)] * p[0] + h[(2, 1)] * p[1] + h[(2, 2)];
        if w < 1e-12 {
            coords.push([f64::NAN, f64::NAN]);
            valid.push(false);
            continue;
        }
        let q = [x / w, y / w];
        valid.push(*ok && in_bounds(&q, width, height));
        coords.push(q);
    }
    PatchGrid { size: patch.size, coords, valid }
}

/// Bilinear samples at the patch coordinates; invalid coordinates yield `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub values: Vec<f64>,
    pub valid_fraction: f64,
}

pub fn sample_patch(gray: &GrayImage, patch: &PatchGrid) -> PatchSample {
    let mut n_valid = 0usize;
    let values = patch
        .coords
        .iter()
        .zip(&patch.valid)
        .map(|(p, ok)| match ok.then(|| gray.bilinear(p[0], p[1])).flatten() {
            Some(v) => {
                n_valid += 1;
                v
            }
            None => f64::NAN,
        })
        .collect::<Vec<_>>();
    let valid_fraction = n_valid as f64 / values.len().max(1) as f64;
    PatchSample { values, valid_fraction }
}

/// SSIM stabilizers for dynamic range `l`: `((0.01 l)², (0.03 l)²)`.
pub fn ssim_constants(l: f64) -> (f64, f64) {
    ((0.01 * l).powi(2), (0.03 * l).powi(2))
}

/// Single-window SSIM over whole patches with unbiased (co)variances.
/// A single-sample patch has zero variance, leaving only the luminance term.
pub fn ssim(a: &[f64], b: &[f64], l: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let (c1, c2) = ssim_constants(l);
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    if a.len() > 1 {
        for (x, y) in a.iter().zip(b) {
            let (dx, dy) = (x - ma, y - mb);
            va += dx * dx;
            vb += dy * dy;
            cov += dx * dy;
        }
        let k = 1.0 / (n - 1.0);
        va *= k;
        vb *= k;
        cov *= k;
    }
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub ref_id: u32,
    pub src_id: u32,
    /// `1 − SSIM`, in `[0, 2]`.
    pub score: f64,
    pub valid: bool,
}

impl PairScore {
    fn invalid(ref_id: u32, src_id: u32) -> Self {
        Self { ref_id, src_id, score: f64::NAN, valid: false }
    }
}

/// Settings of the explicit occlusion test: trace from the surface point
/// toward the source camera starting `offset` away from the point.
#[derive(Clone, Copy)]
pub struct Occlusion<'a> {
    pub field: &'a dyn SdfField,
    pub offset: f64,
    pub trace: TraceParams,
}

/// True when the source camera cannot see `sp`: back-facing, or the ray
/// toward the camera meets the surface first.
pub fn is_occluded(sp: &SurfacePoint, source: &CameraView, occ: &Occlusion<'_>) -> bool {
    let to_cam = source.center() - sp.position;
    let dist = to_cam.norm();
    let dir = to_cam / dist;
    if sp.normal.dot(&dir) <= 0.0 {
        return true;
    }
    if dist <= occ.offset {
        return false;
    }
    let Ok(ray) = Ray::new(sp.position, dir, occ.offset, dist) else { return false };
    let out = sphere_trace(occ.field, &ray, &occ.trace);
    out.hit.is_some() || out.started_inside
}

/// Reference patch around the projection of `sp`, or `None` when the point
/// does not project inside `reference` with a margin of half the patch.
pub fn reference_patch(sp: &SurfacePoint, reference: &CameraView, size: usize) -> Option<PatchGrid> {
    let (px, _) = reference.project(&sp.position)?;
    let half = (size / 2) as f64;
    if px.x - half < 0.0 || px.y - half < 0.0 || px.x + half > (reference.width - 1) as f64 || px.y + half > (reference.height - 1) as f64 {
        return None;
    }
    Some(PatchGrid::centered(px.x, px.y, size, reference.width, reference.height))
}

/// Scores one source view against an already sampled reference patch.
pub fn score_against(
    sp: &SurfacePoint,
    patch: &PatchGrid,
    ref_values: &[f64],
    reference: &CameraView,
    source: &CameraView,
    src_gray: &GrayImage,
    occlusion: Option<&Occlusion<'_>>,
) -> PairScore {
    let invalid = PairScore::invalid(reference.id, source.id);
    if sp.degenerate_normal {
        return invalid;
    }
    let Ok(h) = homography(&tangent_plane(sp), reference, source) else { return invalid };
    let warped = warp_patch(&h, patch, source.width, source.height);
    if !warped.all_valid() {
        return invalid;
    }
    if let Some(occ) = occlusion {
        if is_occluded(sp, source, occ) {
            return invalid;
        }
    }
    let src = sample_patch(src_gray, &warped);
    if src.valid_fraction < 1.0 {
        return invalid;
    }
    let s = ssim(ref_values, &src.values, 1.0);
    PairScore { ref_id: reference.id, src_id: source.id, score: (1.0 - s).clamp(0.0, 2.0), valid: true }
}

/// `1 − SSIM` between the patch around `sp` in `reference` and its
/// homography warp into `source`.
pub fn pair_consistency(
    sp: &SurfacePoint,
    reference: &CameraView,
    ref_gray: &GrayImage,
    source: &CameraView,
    src_gray: &GrayImage,
    patch_size: usize,
    occlusion: Option<&Occlusion<'_>>,
) -> PairScore {
    let Some(patch) = reference_patch(sp, reference, patch_size) else {
        return PairScore::invalid(reference.id, source.id);
    };
    let r = sample_patch(ref_gray, &patch);
    score_against(sp, &patch, &r.values, reference, source, src_gray, occlusion)
}

/// Mean of the `k_best` lowest valid scores and how many contributed.
pub fn aggregate(scores: &[PairScore], k_best: usize) -> Option<(f64, usize)> {
    let mut v: Vec<f64> = scores.iter().filter(|s| s.valid).map(|s| s.score).collect();
    if v.is_empty() || k_best == 0 {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = k_best.min(v.len());
    Some((v[..n].iter().sum::<f64>() / n as f64, n))
}
