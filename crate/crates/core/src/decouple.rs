//! View-dependent / view-independent radiance separation.
//!
//! Every surface observation (a pixel ray hitting the reconstruction) is
//! explained as
//!
//! ```text
//! C(p, w_r) = c_vi(voxel of p) + Σ_k a_k(cell of p) · Y_k(w_r)
//! ```
//!
//! with `Y_k` the nine real spherical harmonics of degree ≤ 2 over the
//! reflected view direction `w_r`. The view-independent color lives on the
//! fine reconstruction grid; the SH coefficients live on a coarser grid, so
//! a lobe has to explain the appearance of many voxels at once. Specular
//! highlights, which depend on `w_r` the same way across a neighborhood,
//! fit that model; the incoherent texture shifts caused by wrong geometry do
//! not, and are left in the images for the consistency check to find.
//! The fit is ridge-regularized least squares, solved in closed form per
//! coarse cell.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, GridSpec};
use crate::raster::RgbImage;
use crate::scene::{trace_pixel, CameraView, SdfField, RENDER_TRACE};
use crate::{Aabb, BoundingSphere, Vec3};

#[derive(Debug, Error)]
pub enum DecoupleError {
    #[error("no views to fit")]
    NoViews,
    #[error("view {0} has no image")]
    MissingImage(u32),
    #[error("lambda must be > 0, got {0}")]
    Lambda(f64),
    #[error("stride must be >= 1")]
    Stride,
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Number of real SH functions of degree ≤ 2.
pub const SH_COUNT: usize = 9;
/// Observations a voxel needs before directional terms are fitted.
pub const MIN_OBSERVATIONS: usize = 4;

/// Mirror of the unit view vector `v` (surface toward camera) about `n`.
pub fn reflection_dir(v: &Vec3, n: &Vec3) -> Vec3 {
    crate::scene::reflect(v, n)
}

/// Real spherical harmonics `Y_0^0 … Y_2^2` at unit `w`.
pub fn sh_basis(w: &Vec3) -> [f64; SH_COUNT] {
    let (x, y, z) = (w.x, w.y, w.z);
    [
        0.282_094_791_773_878_1,
        0.488_602_511_902_919_9 * y,
        0.488_602_511_902_919_9 * z,
        0.488_602_511_902_919_9 * x,
        1.092_548_430_592_079_2 * x * y,
        1.092_548_430_592_079_2 * y * z,
        0.315_391_565_252_520_0 * (3.0 * z * z - 1.0),
        1.092_548_430_592_079_2 * x * z,
        0.546_274_215_296_039_6 * (x * x - y * y),
    ]
}

/// Directional model of one coarse cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LobeCell {
    /// Per-channel SH coefficients of the view-dependent factor.
    pub coef: [[f64; SH_COUNT]; 3],
    pub count: usize,
}

impl LobeCell {
    const EMPTY: Self = Self { coef: [[0.0; SH_COUNT]; 3], count: 0 };

    /// Unclamped directional factor at reflected direction `w_r`.
    pub fn eval(&self, w_r: &Vec3) -> [f64; 3] {
        let y = sh_basis(w_r);
        let mut out = [0.0; 3];
        for ch in 0..3 {
            out[ch] = self.coef[ch].iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
        }
        out
    }
}

/// Fitted radiance: an affine view-independent color per fine voxel and a
/// directional lobe per coarse cell. Cells are addressed by the linear index
/// of their lower corner node.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledField {
    pub fine: GridSpec,
    pub coarse: GridSpec,
    /// Per fine voxel: the view-independent color at the voxel center (row 0)
    /// and its slope along x, y, z in voxel units (rows 1..4).
    pub texture: Vec<[[f64; 3]; 4]>,
    /// Observations per fine voxel.
    pub count: Vec<usize>,
    pub lobes: Vec<LobeCell>,
}

impl DecoupledField {
    pub fn lobe(&self, p: &Vec3) -> &LobeCell {
        &self.lobes[self.coarse.cell_of(p)]
    }

    /// View-independent color at `p`.
    pub fn c_vi(&self, p: &Vec3) -> [f64; 3] {
        let t = &self.texture[self.fine.cell_of(p)];
        let b = texture_basis(&self.fine, p);
        let mut out = [0.0; 3];
        for ch in 0..3 {
            out[ch] = (0..4).map(|i| b[i] * t[i][ch]).sum();
        }
        out
    }

    /// Clamped view-dependent factor seen at `p` with unit normal `n` from a
    /// camera in unit direction `to_eye`.
    pub fn view_dependent(&self, p: &Vec3, n: &Vec3, to_eye: &Vec3) -> [f64; 3] {
        self.lobe(p).eval(&reflection_dir(to_eye, n)).map(|c| c.max(0.0))
    }

    /// Model color `c_vi + C_vd` (directional part unclamped).
    pub fn predict(&self, p: &Vec3, w_r: &Vec3) -> [f64; 3] {
        let vi = self.c_vi(p);
        let vd = self.lobe(p).eval(w_r);
        [vi[0] + vd[0], vi[1] + vd[1], vi[2] + vd[2]]
    }
}

/// Fitting controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoupleConfig {
    /// Ridge weight on the SH coefficients, scaled by the observation count.
    pub lambda: f64,
    /// Nodes per axis of the coarse grid that holds the directional lobes.
    pub lobe_dims: usize,
    /// One jittered pixel per `stride × stride` block of every view.
    pub stride: usize,
    pub seed: u64,
}

impl Default for DecoupleConfig {
    fn default() -> Self {
        Self { lambda: 1e-3, lobe_dims: 9, stride: 1, seed: 0 }
    }
}

/// One surface observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub point: Vec3,
    pub w_r: Vec3,
    pub color: [f64; 3],
}

/// Stratified observations of every view: sphere traces against `field`.
pub fn collect_observations(views: &[CameraView], field: &dyn SdfField, bounds: &BoundingSphere, cfg: &DecoupleConfig) -> Result<Vec<Observation>, DecoupleError> {
    if cfg.stride == 0 {
        return Err(DecoupleError::Stride);
    }
    let mut out = Vec::new();
    for (vi, v) in views.iter().enumerate() {
        let img = v.image.as_ref().ok_or(DecoupleError::MissingImage(v.id))?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(vi as u64));
        let s = cfg.stride;
        let mut pixels = Vec::new();
        for by in (0..v.height).step_by(s) {
            for bx in (0..v.width).step_by(s) {
                let x = if s > 1 { (bx + rng.random_range(0..s)).min(v.width - 1) } else { bx };
                let y = if s > 1 { (by + rng.random_range(0..s)).min(v.height - 1) } else { by };
                pixels.push((x, y));
            }
        }
        let obs: Vec<Option<Observation>> = pixels
            .par_iter()
            .map(|&(x, y)| {
                let hit = trace_pixel(field, v, bounds, x, y, &RENDER_TRACE)?;
                let c = img.get(x, y);
                Some(Observation {
                    point: hit.position,
                    w_r: reflection_dir(&(-hit.ray_dir), &hit.normal),
                    color: [c[0] as f64, c[1] as f64, c[2] as f64],
                })
            })
            .collect();
        out.extend(obs.into_iter().flatten());
    }
    Ok(out)
}

/// Ridge weight on the in-voxel slope terms. It only matters when a voxel's
/// observations are (nearly) coplanar or too few to pin a slope.
const SLOPE_RIDGE: f64 = 1e-3;

/// `[1, local x, local y, local z]`, the local position in voxel units
/// relative to the voxel center.
fn texture_basis(fine: &GridSpec, p: &Vec3) -> [f64; 4] {
    let [i, j, k] = fine.coords(fine.cell_of(p));
    let s = fine.spacing();
    let l = (p - (fine.node_position(i, j, k) + 0.5 * s)).component_div(&s);
    [1.0, l.x, l.y, l.z]
}

/// Least-squares affine fit of the columns of `values` on `basis`
/// (slope terms lightly ridge-regularized). Returns the `4 × N` coefficients.
fn affine_fit<const N: usize>(basis: &[[f64; 4]], values: &[[f64; N]]) -> [[f64; N]; 4] {
    let mut btb = nalgebra::Matrix4::<f64>::zeros();
    let mut btv = [[0.0; N]; 4];
    for (b, v) in basis.iter().zip(values) {
        for i in 0..4 {
            for j in 0..4 {
                btb[(i, j)] += b[i] * b[j];
            }
            for c in 0..N {
                btv[i][c] += b[i] * v[c];
            }
        }
    }
    let m = basis.len() as f64;
    for i in 1..4 {
        btb[(i, i)] += SLOPE_RIDGE * m;
    }
    let Some(inv) = btb.try_inverse() else { return [[0.0; N]; 4] };
    let mut out = [[0.0; N]; 4];
    for i in 0..4 {
        for c in 0..N {
            out[i][c] = (0..4).map(|j| inv[(i, j)] * btv[j][c]).sum();
        }
    }
    out
}

fn residualize<const N: usize>(basis: &[[f64; 4]], values: &[[f64; N]]) -> Vec<[f64; N]> {
    let coef = affine_fit(basis, values);
    basis
        .iter()
        .zip(values)
        .map(|(b, v)| {
            let mut r = *v;
            for c in 0..N {
                r[c] -= (0..4).map(|i| b[i] * coef[i][c]).sum::<f64>();
            }
            r
        })
        .collect()
}

/// Fits the lobe of one coarse cell from observations grouped by fine
/// voxel.
///
/// The view-independent color of a fine voxel is affine in position. Those
/// affine terms are free per voxel, so they can be eliminated: for fixed SH
/// coefficients the best affine color is the voxel's least-squares fit to
/// `C − Y·a`. What is left is a ridge regression of colors on SH features,
/// both with their per-voxel affine fit removed.
pub fn fit_lobe(fine: &GridSpec, groups: &[Vec<&Observation>], lambda: f64) -> LobeCell {
    let n: usize = groups.iter().map(Vec::len).sum();
    if n < MIN_OBSERVATIONS {
        return LobeCell { count: n, ..LobeCell::EMPTY };
    }
    let mut ata = DMatrix::<f64>::zeros(SH_COUNT, SH_COUNT);
    let mut atb = DMatrix::<f64>::zeros(SH_COUNT, 3);
    for g in groups {
        let basis: Vec<[f64; 4]> = g.iter().map(|o| texture_basis(fine, &o.point)).collect();
        let ys: Vec<[f64; SH_COUNT]> = g.iter().map(|o| sh_basis(&o.w_r)).collect();
        let cs: Vec<[f64; 3]> = g.iter().map(|o| o.color).collect();
        let dy = residualize(&basis, &ys);
        let dc = residualize(&basis, &cs);
        for (y, c) in dy.iter().zip(&dc) {
            for i in 0..SH_COUNT {
                for j in 0..SH_COUNT {
                    ata[(i, j)] += y[i] * y[j];
                }
                for ch in 0..3 {
                    atb[(i, ch)] += y[i] * c[ch];
                }
            }
        }
    }
    let reg = lambda * n as f64;
    for k in 0..SH_COUNT {
        ata[(k, k)] += reg;
    }
    // Positive definite: a Gram matrix plus a positive ridge.
    let x = match ata.clone().cholesky() {
        Some(ch) => ch.solve(&atb),
        None => ata.lu().solve(&atb).unwrap_or_else(|| DMatrix::zeros(SH_COUNT, 3)),
    };
    let mut cell = LobeCell { count: n, ..LobeCell::EMPTY };
    for ch in 0..3 {
        let col: DVector<f64> = x.column(ch).into();
        for k in 0..SH_COUNT {
            cell.coef[ch][k] = col[k];
        }
    }
    cell
}

/// Fits the radiance model: fine voxels on a `dims` grid over `bbox`, lobes
/// on a `cfg.lobe_dims` grid over the same box.
pub fn fit_decoupled(
    views: &[CameraView],
    field: &dyn SdfField,
    bounds: &BoundingSphere,
    dims: [usize; 3],
    bbox: Aabb,
    cfg: &DecoupleConfig,
) -> Result<DecoupledField, DecoupleError> {
    if views.is_empty() {
        return Err(DecoupleError::NoViews);
    }
    let obs = collect_observations(views, field, bounds, cfg)?;
    fit_observations(&obs, dims, bbox, cfg)
}

/// Bins `obs` and fits every cell.
pub fn fit_observations(obs: &[Observation], dims: [usize; 3], bbox: Aabb, cfg: &DecoupleConfig) -> Result<DecoupledField, DecoupleError> {
    if !(cfg.lambda > 0.0) {
        return Err(DecoupleError::Lambda(cfg.lambda));
    }
    let fine = GridSpec::new(dims, bbox)?;
    let coarse = GridSpec::new([cfg.lobe_dims; 3], bbox)?;
    // coarse cell -> fine voxel -> observations, in first-seen order
    let mut bins: Vec<Vec<(usize, Vec<&Observation>)>> = vec![Vec::new(); coarse.len()];
    for o in obs {
        let (c, f) = (coarse.cell_of(&o.point), fine.cell_of(&o.point));
        let bin = &mut bins[c];
        match bin.iter_mut().find(|(k, _)| *k == f) {
            Some((_, v)) => v.push(o),
            None => bin.push((f, vec![o])),
        }
    }
    let lobes: Vec<LobeCell> = bins
        .par_iter()
        .map(|b| {
            if b.is_empty() {
                LobeCell::EMPTY
            } else {
                let groups: Vec<Vec<&Observation>> = b.iter().map(|(_, g)| g.clone()).collect();
                fit_lobe(&fine, &groups, cfg.lambda)
            }
        })
        .collect();
    let mut per_voxel: Vec<Vec<([f64; 4], [f64; 3])>> = vec![Vec::new(); fine.len()];
    for o in obs {
        let vd = lobes[coarse.cell_of(&o.point)].eval(&o.w_r);
        per_voxel[fine.cell_of(&o.point)].push((texture_basis(&fine, &o.point), [o.color[0] - vd[0], o.color[1] - vd[1], o.color[2] - vd[2]]));
    }
    let count: Vec<usize> = per_voxel.iter().map(Vec::len).collect();
    let texture: Vec<[[f64; 3]; 4]> = per_voxel
        .par_iter()
        .map(|v| {
            if v.is_empty() {
                return [[0.0; 3]; 4];
            }
            let (b, c): (Vec<[f64; 4]>, Vec<[f64; 3]>) = v.iter().copied().unzip();
            affine_fit(&b, &c)
        })
        .collect();
    Ok(DecoupledField { fine, coarse, texture, count, lobes })
}

/// The view-dependent image `I_vd`: clamped directional factor at each
/// pixel's surface point, black where the ray misses.
pub fn render_vd(view: &CameraView, field: &dyn SdfField, bounds: &BoundingSphere, dec: &DecoupledField) -> RgbImage {
    let (w, h) = (view.width, view.height);
    let rows: Vec<Vec<[f32; 3]>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| match trace_pixel(field, view, bounds, x, y, &RENDER_TRACE) {
                    Some(hit) => {
                        let c = dec.view_dependent(&hit.position, &hit.normal, &(-hit.ray_dir));
                        [c[0] as f32, c[1] as f32, c[2] as f32]
                    }
                    None => [0.0; 3],
                })
                .collect()
        })
        .collect();
    RgbImage { width: w, height: h, data: rows.into_iter().flatten().collect() }
}

/// `clamp(image − vd, 0, 1)`, quantized to 8 bits like every stored image.
pub fn subtract_vd(image: &RgbImage, vd: &RgbImage) -> RgbImage {
    let data = image
        .data
        .iter()
        .zip(&vd.data)
        .map(|(c, v)| [(c[0] - v[0]).clamp(0.0, 1.0), (c[1] - v[1]).clamp(0.0, 1.0), (c[2] - v[2]).clamp(0.0, 1.0)])
        .collect();
    RgbImage { width: image.width, height: image.height, data }.quantized()
}

/// Processed images and the `I_vd` images they were made with.
pub fn decouple_images(views: &[CameraView], field: &dyn SdfField, bounds: &BoundingSphere, dec: &DecoupledField) -> Result<(Vec<RgbImage>, Vec<RgbImage>), DecoupleError> {
    let mut processed = Vec::with_capacity(views.len());
    let mut vds = Vec::with_capacity(views.len());
    for v in views {
        let img = v.image.as_ref().ok_or(DecoupleError::MissingImage(v.id))?;
        let vd = render_vd(v, field, bounds, dec);
        processed.push(subtract_vd(img, &vd));
        vds.push(vd);
    }
    Ok((processed, vds))
}
