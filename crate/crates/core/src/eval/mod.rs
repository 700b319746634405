//! Evaluation: depth and 3D error, sparsification curves, AUSE, chamfer
//! distance and unit-sphere normalization.

mod kdtree;

pub use kdtree::KdTree;

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{trace_pixel, AnalyticSdf, CameraView, SdfField, RENDER_TRACE};
use crate::uncertainty::{UncertaintyGrid, U_MAX};
use crate::{BoundingSphere, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} errors vs {1} uncertainties")]
    LengthMismatch(usize, usize),
    #[error("input is empty")]
    Empty,
    #[error("fractions must lie in [0, 1]")]
    BadFraction,
    #[error("point set has zero extent")]
    ZeroExtent,
    #[error("view {0} has no ground-truth depth")]
    NoDepth(u32),
}

/// Remaining-mean curves for removal by true error (oracle) and by uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsificationCurve {
    pub fractions: Vec<f64>,
    pub by_gt: Vec<f64>,
    pub by_unc: Vec<f64>,
    /// Mean error of the full set.
    pub full_mean: f64,
}

/// `0, 0.01, …, 1.00`.
pub fn default_fractions() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Indices ordered by decreasing `key`, ties by increasing index.
fn removal_order(key: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..key.len()).collect();
    idx.sort_by(|&a, &b| key[b].total_cmp(&key[a]));
    idx
}

/// Mean of `errors` after dropping the first `k` entries of `order`, for every
/// `k` in `removed`. The mean of an empty remainder is 0.
fn remaining_means(errors: &[f64], order: &[usize], removed: &[usize]) -> Vec<f64> {
    let n = order.len();
    // suffix[k] = sum of errors[order[k..]], summed from the back
    let mut suffix = vec![0.0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] + errors[order[k]];
    }
    removed.iter().map(|&k| if k >= n { 0.0 } else { suffix[k] / (n - k) as f64 }).collect()
}

/// Number of elements removed at fraction `t` of `n`.
pub fn removed_count(t: f64, n: usize) -> usize {
    ((t * n as f64 + 1e-9).floor() as usize).min(n)
}

pub fn sparsification(errors: &[f64], uncertainties: &[f64], fractions: &[f64]) -> Result<SparsificationCurve, EvalError> {
    if errors.len() != uncertainties.len() {
        return Err(EvalError::LengthMismatch(errors.len(), uncertainties.len()));
    }
    if errors.is_empty() {
        return Err(EvalError::Empty);
    }
    if fractions.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(EvalError::BadFraction);
    }
    let n = errors.len();
    let removed: Vec<usize> = fractions.iter().map(|&t| removed_count(t, n)).collect();
    let by_gt = remaining_means(errors, &removal_order(errors), &removed);
    let by_unc = remaining_means(errors, &removal_order(uncertainties), &removed);
    let full_mean = remaining_means(errors, &removal_order(errors), &[0])[0];
    Ok(SparsificationCurve { fractions: fractions.to_vec(), by_gt, by_unc, full_mean })
}

/// Area between the two curves, both divided by the full-set mean error,
/// by the trapezoid rule over the curve's fractions. Zero when the full-set
/// mean is zero.
pub fn ause(curve: &SparsificationCurve) -> f64 {
    if curve.full_mean == 0.0 {
        return 0.0;
    }
    let d: Vec<f64> = curve.by_unc.iter().zip(&curve.by_gt).map(|(u, g)| (u - g) / curve.full_mean).collect();
    curve.fractions.windows(2).zip(d.windows(2)).map(|(t, v)| 0.5 * (v[0] + v[1]) * (t[1] - t[0])).sum()
}

/// Sparsification + AUSE over the default fractions.
pub fn ause_of(errors: &[f64], uncertainties: &[f64]) -> Result<(f64, SparsificationCurve), EvalError> {
    let c = sparsification(errors, uncertainties, &default_fractions())?;
    Ok((ause(&c), c))
}

/// `fraction,err_by_gt,err_by_unc` rows.
pub fn write_curve_csv(path: &Path, curve: &SparsificationCurve) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "fraction,err_by_gt,err_by_unc")?;
    for i in 0..curve.fractions.len() {
        writeln!(f, "{},{},{}", curve.fractions[i], curve.by_gt[i], curve.by_unc[i])?;
    }
    f.flush()
}

/// Distance from `p` to the ground-truth surface. Exact for the shipped
/// primitives, whose fields are true distances.
pub fn point_3d_error(p: &Vec3, gt: &AnalyticSdf) -> f64 {
    gt.eval(p).abs()
}

/// How pixels where exactly one of ground truth and prediction hits are scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissPolicy {
    /// Error = this value; uncertainty = the maximum, 2.
    Penalty(f64),
    Exclude,
}

/// One evaluated pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelError {
    pub x: u32,
    pub y: u32,
    /// `|Δdepth|` along the ray.
    pub abs: f64,
    /// Predicted surface point, if the prediction hit.
    pub point: Option<Vec3>,
}

impl PixelError {
    pub fn sq(&self) -> f64 {
        self.abs * self.abs
    }
}

/// Per-pixel depth error of `field` against the view's ground-truth depth.
/// Pixels missed by both are left out.
pub fn depth_error_map(field: &dyn SdfField, view: &CameraView, bounds: &BoundingSphere, miss: MissPolicy) -> Result<Vec<PixelError>, EvalError> {
    let depth = view.depth.as_ref().ok_or(EvalError::NoDepth(view.id))?;
    let rows: Vec<Vec<PixelError>> = (0..view.height)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::new();
            for x in 0..view.width {
                let gt = depth[y * view.width + x] as f64;
                let pred = trace_pixel(field, view, bounds, x, y, &RENDER_TRACE);
                let (x, y) = (x as u32, y as u32);
                match (gt > 0.0, pred) {
                    (true, Some(hit)) => row.push(PixelError { x, y, abs: (hit.t - gt).abs(), point: Some(hit.position) }),
                    (false, None) => {}
                    (_, pred) => {
                        if let MissPolicy::Penalty(pen) = miss {
                            row.push(PixelError { x, y, abs: pen, point: pred.map(|h| h.position) });
                        }
                    }
                }
            }
            row
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// Uncertainty read for a pixel: the field at the predicted point, or the
/// maximum when the prediction missed.
pub fn pixel_uncertainty(grid: &UncertaintyGrid, e: &PixelError) -> f64 {
    e.point.map_or(U_MAX, |p| grid.eval(&p))
}

/// Surface points of `field` seen through every `stride`-th pixel of each view.
pub fn view_surface_points(field: &dyn SdfField, views: &[CameraView], bounds: &BoundingSphere, stride: usize) -> Vec<Vec3> {
    let stride = stride.max(1);
    views
        .iter()
        .flat_map(|v| {
            let rows: Vec<Vec<Vec3>> = (0..v.height)
                .step_by(stride)
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|y| (0..v.width).step_by(stride).filter_map(|x| trace_pixel(field, v, bounds, x, y, &RENDER_TRACE)).map(|h| h.position).collect())
                .collect();
            rows.into_iter().flatten()
        })
        .collect()
}

/// `0.5 · (mean_a min_b |a − b| + mean_b min_a |a − b|)`.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::Empty);
    }
    let one_sided = |from: &[Vec3], to: &[Vec3]| {
        let tree = KdTree::new(to);
        let d: Vec<f64> = from.par_iter().map(|p| tree.nearest_sq(p).sqrt()).collect();
        d.iter().sum::<f64>() / from.len() as f64
    };
    Ok(0.5 * (one_sided(a, b) + one_sided(b, a)))
}

/// Maps points into the unit ball: subtract the bounding-box center, divide
/// by the half diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub center: Vec3,
    pub scale: f64,
}

impl Similarity {
    pub fn fit(points: &[Vec3]) -> Result<Self, EvalError> {
        if points.is_empty() {
            return Err(EvalError::Empty);
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let half = 0.5 * (hi - lo).norm();
        if !(half > 0.0) {
            return Err(EvalError::ZeroExtent);
        }
        Ok(Self { center: 0.5 * (lo + hi), scale: 1.0 / half })
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.center) * self.scale
    }

    pub fn invert(&self, q: &Vec3) -> Vec3 {
        q / self.scale + self.center
    }
}

pub fn normalize_to_unit_sphere(points: &[Vec3]) -> Result<(Vec<Vec3>, Similarity), EvalError> {
    let s = Similarity::fit(points)?;
    Ok((points.iter().map(|p| s.apply(p)).collect(), s))
}

/// Spearman rank correlation with average ranks for ties; 0 when either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Seeded uniform uncertainties in `[0, 2)`, the reference a useful field must beat.
pub fn random_uncertainties(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0.0..U_MAX)).collect()
}

/// Summary written by the `eval` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuseReport {
    pub ause_mse: f64,
    pub ause_mae: f64,
    pub ause_3d: f64,
    pub cd: f64,
    pub n_pixels: usize,
    pub n_points: usize,
}

/// All three sparsification curves of an evaluation.
#[derive(Debug, Clone)]
pub struct EvalCurves {
    pub mae: SparsificationCurve,
    pub mse: SparsificationCurve,
    pub points: SparsificationCurve,
}

/// What [`evaluate`] measures and how.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Pixel stride when collecting 3D points from the views.
    pub point_stride: usize,
    /// `None` means the bounding-sphere diameter.
    pub miss_penalty: Option<f64>,
    pub exclude_misses: bool,
    /// Grid resolution for the chamfer surface samples.
    pub chamfer_dims: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { point_stride: 1, miss_penalty: None, exclude_misses: false, chamfer_dims: 64 }
    }
}

/// Inputs of a full evaluation.
pub struct EvalInput<'a> {
    pub gt: &'a AnalyticSdf,
    pub recon: &'a crate::scene::VoxelSdf,
    pub views: &'a [CameraView],
    pub bounds: &'a BoundingSphere,
}

/// 3D errors and uncertainties at the reconstruction's surface points as seen
/// from the views.
pub fn point_errors(input: &EvalInput<'_>, grid: &UncertaintyGrid, stride: usize) -> (Vec<Vec3>, Vec<f64>, Vec<f64>) {
    let pts = view_surface_points(input.recon, input.views, input.bounds, stride);
    let err = pts.iter().map(|p| point_3d_error(p, input.gt)).collect();
    let unc = pts.iter().map(|p| grid.eval(p)).collect();
    (pts, err, unc)
}

/// Chamfer distance between the reconstruction's and the ground truth's
/// surface samples, both mapped by the ground truth's unit-sphere transform.
pub fn surface_chamfer(gt: &AnalyticSdf, recon: &crate::scene::VoxelSdf, dims: usize) -> Result<f64, EvalError> {
    let gt_pts = crate::scene::analytic_surface_points(gt, [dims; 3], recon.spec.bbox).map_err(|_| EvalError::Empty)?;
    let rec_pts = crate::scene::grid_surface_points(recon);
    let s = Similarity::fit(&gt_pts)?;
    let a: Vec<Vec3> = rec_pts.iter().map(|p| s.apply(p)).collect();
    let b: Vec<Vec3> = gt_pts.iter().map(|p| s.apply(p)).collect();
    chamfer(&a, &b)
}

pub fn evaluate(input: &EvalInput<'_>, grid: &UncertaintyGrid, cfg: &EvalConfig) -> Result<(AuseReport, EvalCurves), EvalError> {
    let miss = if cfg.exclude_misses {
        MissPolicy::Exclude
    } else {
        MissPolicy::Penalty(cfg.miss_penalty.unwrap_or(input.bounds.diameter()))
    };
    let mut pix = Vec::new();
    for v in input.views {
        pix.extend(depth_error_map(input.recon, v, input.bounds, miss)?);
    }
    let abs: Vec<f64> = pix.iter().map(|e| e.abs).collect();
    let sq: Vec<f64> = pix.iter().map(|e| e.sq()).collect();
    let pu: Vec<f64> = pix.iter().map(|e| pixel_uncertainty(grid, e)).collect();
    let (ause_mae, mae) = ause_of(&abs, &pu)?;
    let (ause_mse, mse) = ause_of(&sq, &pu)?;
    let (_, err, unc) = point_errors(input, grid, cfg.point_stride);
    let (ause_3d, points) = ause_of(&err, &unc)?;
    let cd = surface_chamfer(input.gt, input.recon, cfg.chamfer_dims)?;
    let report = AuseReport { ause_mse, ause_mae, ause_3d, cd, n_pixels: pix.len(), n_points: err.len() };
    Ok((report, EvalCurves { mae, mse, points }))
}

/// ASCII PLY with `x y z` vertices.
pub fn write_ply(path: &Path, points: &[Vec3]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header", points.len())?;
    for p in points {
        writeln!(f, "{} {} {}", p.x, p.y, p.z)?;
    }
    f.flush()
}
