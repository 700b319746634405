//! Uncertainty-guided next-best-view selection and a closed incremental
//! reconstruction loop built on TSDF fusion.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::LabelParams;
use crate::eval::surface_chamfer;
use crate::raster::RgbImage;
use crate::scene::{
    grid_surface_points, render_view, trace_pixel, tsdf_fuse, CameraView, SceneDescription, SdfField, VoxelSdf, RENDER_TRACE,
};
use crate::uncertainty::{train_stage1, LabelContext, TrainConfig, UncertaintyGrid};
use crate::{Aabb, BoundingSphere, Vec3};

#[derive(Debug, Error)]
pub enum NbvError {
    #[error("need at least 2 candidates per region ({candidates} candidates, {regions} regions)")]
    TooFewCandidates { candidates: usize, regions: usize },
    #[error("region {0} has fewer than 2 candidate views")]
    SparseRegion(usize),
    #[error("n_regions must be >= 1")]
    NoRegions,
    #[error("no unused candidate views left")]
    EmptyPool,
    #[error("round {round} failed: {reason}")]
    Round { round: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewStatus {
    Unused,
    Training,
    Test,
}

/// Candidate views bucketed into viewing-direction regions.
#[derive(Debug, Clone)]
pub struct ViewPool {
    pub views: Vec<CameraView>,
    pub region: Vec<usize>,
    pub status: Vec<ViewStatus>,
    pub n_regions: usize,
}

impl ViewPool {
    pub fn indices(&self, s: ViewStatus) -> Vec<usize> {
        (0..self.views.len()).filter(|&i| self.status[i] == s).collect()
    }
}

/// Region of viewing direction `d` (from the object toward the camera).
///
/// An even count `n ≥ 2` splits the sphere into two latitude bands
/// (`z ≥ 0`, `z < 0`) of `n/2` longitude sectors each; an odd count uses
/// `n` longitude sectors.
pub fn region_of(d: &Vec3, n_regions: usize) -> usize {
    let lon = d.y.atan2(d.x).rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU;
    if n_regions >= 2 && n_regions % 2 == 0 {
        let sectors = n_regions / 2;
        let s = ((lon * sectors as f64) as usize).min(sectors - 1);
        let band = usize::from(d.z < 0.0);
        band * sectors + s
    } else {
        ((lon * n_regions as f64) as usize).min(n_regions - 1)
    }
}

/// Buckets `candidates` by direction around `center` and picks one training
/// and one test view per region.
pub fn init_pool(candidates: Vec<CameraView>, center: Vec3, n_regions: usize, seed: u64) -> Result<ViewPool, NbvError> {
    if n_regions == 0 {
        return Err(NbvError::NoRegions);
    }
    if candidates.len() < 2 * n_regions {
        return Err(NbvError::TooFewCandidates { candidates: candidates.len(), regions: n_regions });
    }
    let region: Vec<usize> = candidates.iter().map(|c| region_of(&(c.center() - center).normalize(), n_regions)).collect();
    let mut status = vec![ViewStatus::Unused; candidates.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for r in 0..n_regions {
        let mut members: Vec<usize> = (0..candidates.len()).filter(|&i| region[i] == r).collect();
        if members.len() < 2 {
            return Err(NbvError::SparseRegion(r));
        }
        members.shuffle(&mut rng);
        status[members[0]] = ViewStatus::Training;
        status[members[1]] = ViewStatus::Test;
    }
    Ok(ViewPool { views: candidates, region, status, n_regions })
}

/// Per-pixel uncertainty seen by `view`: `U` at the traced surface point,
/// `None` where the ray misses.
pub fn render_uncertainty_map(view: &CameraView, grid: &UncertaintyGrid, field: &dyn SdfField, bounds: &BoundingSphere) -> Vec<Option<f64>> {
    let rows: Vec<Vec<Option<f64>>> = (0..view.height)
        .into_par_iter()
        .map(|y| (0..view.width).map(|x| trace_pixel(field, view, bounds, x, y, &RENDER_TRACE).map(|h| grid.eval(&h.position))).collect())
        .collect();
    rows.into_iter().flatten().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    #[default]
    Mean,
    Max,
}

/// Mean (or max) over valid pixels; 0 when nothing is valid.
pub fn score_view(map: &[Option<f64>], mode: ScoreMode) -> f64 {
    let valid = map.iter().flatten();
    match mode {
        ScoreMode::Mean => {
            let (s, n) = valid.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            if n == 0 {
                0.0
            } else {
                s / n as f64
            }
        }
        ScoreMode::Max => valid.fold(0.0, |m: f64, v| m.max(*v)),
    }
}

/// Index of the highest-scoring entry; ties go to the lowest view id.
pub fn argmax_by_score(scored: &[(u32, usize, f64)]) -> Option<usize> {
    scored
        .iter()
        .copied()
        .reduce(|best, c| if c.2 > best.2 || (c.2 == best.2 && c.0 < best.0) { c } else { best })
        .map(|(_, i, _)| i)
}

/// Scores every unused candidate and returns the pool index of the best one.
pub fn select_nbv(pool: &ViewPool, grid: &UncertaintyGrid, field: &dyn SdfField, bounds: &BoundingSphere, mode: ScoreMode) -> Result<usize, NbvError> {
    let unused = pool.indices(ViewStatus::Unused);
    if unused.is_empty() {
        return Err(NbvError::EmptyPool);
    }
    let scored: Vec<(u32, usize, f64)> = unused
        .iter()
        .map(|&i| (pool.views[i].id, i, score_view(&render_uncertainty_map(&pool.views[i], grid, field, bounds), mode)))
        .collect();
    argmax_by_score(&scored).ok_or(NbvError::EmptyPool)
}

/// Rank-colored heat map: valid pixels are colored by their rank among the
/// valid values (blue = lowest, red = highest); misses are black.
pub fn heat_map(map: &[Option<f64>], width: usize, height: usize) -> RgbImage {
    let mut idx: Vec<usize> = (0..map.len()).filter(|&i| map[i].is_some()).collect();
    idx.sort_by(|&a, &b| map[a].unwrap().total_cmp(&map[b].unwrap()).then(a.cmp(&b)));
    let mut img = RgbImage::new(width, height, [0.0; 3]);
    let n = idx.len().max(2) - 1;
    for (rank, &i) in idx.iter().enumerate() {
        let t = rank as f32 / n as f32;
        img.data[i] = [t, 1.0 - (2.0 * t - 1.0).abs(), 1.0 - t];
    }
    img
}

/// PSNR of images in `[0, 1]`, capped at `cap` (also returned for identical images).
pub fn psnr(a: &RgbImage, b: &RgbImage, cap: f64) -> f64 {
    assert_eq!(a.data.len(), b.data.len());
    let mut se = 0.0;
    for (x, y) in a.data.iter().zip(&b.data) {
        for ch in 0..3 {
            let d = (x[ch] - y[ch]) as f64;
            se += d * d;
        }
    }
    let mse = se / (3 * a.data.len()) as f64;
    if mse == 0.0 {
        cap
    } else {
        (10.0 * (1.0 / mse).log10()).min(cap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[default]
    Uncertainty,
    Random,
}

/// Settings of the incremental loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NbvConfig {
    pub policy: Policy,
    pub rounds: usize,
    pub n_regions: usize,
    pub score: ScoreMode,
    /// TSDF grid nodes per axis and half extent of its cube.
    pub tsdf_dims: usize,
    pub tsdf_half_extent: f64,
    pub truncation: f64,
    pub depth_noise: f64,
    /// Training of the per-round uncertainty grid.
    pub train: TrainConfig,
    pub patch_size: usize,
    pub k_best: usize,
    pub psnr_cap: f64,
    /// Grid resolution of the chamfer surface samples.
    pub cd_dims: usize,
    pub seed: u64,
}

impl Default for NbvConfig {
    fn default() -> Self {
        Self {
            policy: Policy::Uncertainty,
            rounds: 10,
            n_regions: 4,
            score: ScoreMode::Mean,
            tsdf_dims: 48,
            tsdf_half_extent: 1.5,
            truncation: 0.12,
            depth_noise: 0.0,
            train: TrainConfig { steps_stage1: 600, dims: 32, ..TrainConfig::default() },
            patch_size: 11,
            k_best: 4,
            psnr_cap: 100.0,
            cd_dims: 48,
            seed: 0,
        }
    }
}

impl NbvConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_regions == 0 {
            return Err("n_regions must be >= 1".into());
        }
        if self.tsdf_dims < 2 || self.cd_dims < 2 {
            return Err("tsdf_dims and cd_dims must be >= 2".into());
        }
        if !(self.tsdf_half_extent > 0.0) || !(self.truncation > 0.0) || !(self.depth_noise >= 0.0) {
            return Err("tsdf_half_extent and truncation must be > 0, depth_noise >= 0".into());
        }
        if self.patch_size % 2 == 0 || self.k_best == 0 {
            return Err("patch_size must be odd and k_best >= 1".into());
        }
        if !(self.psnr_cap > 0.0) {
            return Err("psnr_cap must be > 0".into());
        }
        self.train.validate().map_err(|e| e.to_string())
    }
}

/// Metrics of one round. `chosen_view` is the view added at the end of the
/// round (none in the last round).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub chosen_view: Option<u32>,
    pub cd: f64,
    pub psnr: f64,
    /// Mean of `U` over the reconstruction's surface samples (NaN when the
    /// policy trains no grid).
    pub mean_uncertainty: f64,
}

/// State after the last round.
#[derive(Debug, Clone)]
pub struct NbvState {
    pub pool: ViewPool,
    pub recon: VoxelSdf,
    pub grid: Option<UncertaintyGrid>,
    pub trajectory: Vec<RoundRecord>,
}

/// Re-renders the test views with the ground-truth material on the
/// reconstructed geometry and averages PSNR against the stored images.
fn test_psnr(scene: &SceneDescription, pool: &ViewPool, recon: &VoxelSdf, cap: f64) -> f64 {
    let tests = pool.indices(ViewStatus::Test);
    let total: f64 = tests
        .iter()
        .map(|&i| {
            let v = &pool.views[i];
            let r = render_view(recon, &scene.shading, v, &scene.bounds);
            psnr(r.image.as_ref().unwrap(), v.image.as_ref().unwrap(), cap)
        })
        .sum();
    total / tests.len().max(1) as f64
}

/// Called after every round with the state so far; used to dump heat maps.
pub type RoundHook<'a> = dyn FnMut(usize, &ViewPool, Option<&UncertaintyGrid>, &VoxelSdf) + 'a;

/// Runs `cfg.rounds` rounds of fuse → distill → record → select. The pool's
/// views must carry images and ground-truth depth.
pub fn run_incremental(scene: &SceneDescription, mut pool: ViewPool, cfg: &NbvConfig, mut hook: Option<&mut RoundHook<'_>>) -> Result<NbvState, (NbvError, Vec<RoundRecord>)> {
    cfg.validate().map_err(|e| (NbvError::Round { round: 0, reason: e }, Vec::new()))?;
    let bbox = Aabb::cube(scene.bounds.center, cfg.tsdf_half_extent);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5_5A5A);
    let mut trajectory = Vec::new();
    let mut last = None;
    for round in 0..=cfg.rounds {
        let fail = |reason: String, t: &Vec<RoundRecord>| (NbvError::Round { round, reason }, t.clone());
        let train_idx = pool.indices(ViewStatus::Training);
        let train_views: Vec<CameraView> = train_idx.iter().map(|&i| pool.views[i].clone()).collect();
        let refs: Vec<&CameraView> = train_views.iter().collect();
        let recon = tsdf_fuse(&refs, [cfg.tsdf_dims; 3], bbox, cfg.truncation, cfg.depth_noise, cfg.seed.wrapping_add(round as u64))
            .map_err(|e| fail(e.to_string(), &trajectory))?;
        let grid = match cfg.policy {
            Policy::Uncertainty => {
                let gray: Vec<_> = train_views.iter().map(|v| v.image.as_ref().expect("pool views carry images").to_gray()).collect();
                let params = LabelParams { patch_size: cfg.patch_size, k_best: cfg.k_best, ..LabelParams::default() };
                let ctx = LabelContext { views: &train_views, gray: &gray, field: &recon, bounds: &scene.bounds, params };
                let mut grid = UncertaintyGrid::new([cfg.train.dims; 3], bbox, cfg.train.init_value).map_err(|e| fail(e.to_string(), &trajectory))?;
                let tc = TrainConfig { seed: cfg.train.seed.wrapping_add(round as u64), ..cfg.train.clone() };
                train_stage1(&ctx, &mut grid, &tc).map_err(|e| fail(e.to_string(), &trajectory))?;
                Some(grid)
            }
            Policy::Random => None,
        };
        let cd = surface_chamfer(&scene.sdf, &recon, cfg.cd_dims).unwrap_or(f64::INFINITY);
        let psnr = test_psnr(scene, &pool, &recon, cfg.psnr_cap);
        let mean_uncertainty = grid.as_ref().map_or(f64::NAN, |g| {
            let pts = grid_surface_points(&recon);
            pts.iter().map(|p| g.eval(p)).sum::<f64>() / pts.len().max(1) as f64
        });
        if let Some(h) = hook.as_deref_mut() {
            h(round, &pool, grid.as_ref(), &recon);
        }
        let mut rec = RoundRecord { round, chosen_view: None, cd, psnr, mean_uncertainty };
        if round < cfg.rounds {
            let unused = pool.indices(ViewStatus::Unused);
            if unused.is_empty() {
                trajectory.push(rec);
                return Err(fail(NbvError::EmptyPool.to_string(), &trajectory));
            }
            let pick = match &grid {
                Some(g) => select_nbv(&pool, g, &recon, &scene.bounds, cfg.score).map_err(|e| fail(e.to_string(), &trajectory))?,
                None => unused[rng.random_range(0..unused.len())],
            };
            pool.status[pick] = ViewStatus::Training;
            rec.chosen_view = Some(pool.views[pick].id);
        }
        trajectory.push(rec);
        last = Some((recon, grid));
    }
    let (recon, grid) = last.expect("at least one round runs");
    Ok(NbvState { pool, recon, grid, trajectory })
}

/// First round whose CD is at or below `target`.
pub fn rounds_to_reach(trajectory: &[RoundRecord], target: f64) -> Option<usize> {
    trajectory.iter().find(|r| r.cd <= target).map(|r| r.round)
}

/// `round,chosen_view,cd,psnr,mean_uncertainty` rows; absent values are empty.
pub fn write_trajectory_csv(path: &Path, trajectory: &[RoundRecord]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "round,chosen_view,cd,psnr,mean_uncertainty")?;
    for r in trajectory {
        let chosen = r.chosen_view.map(|v| v.to_string()).unwrap_or_default();
        let mu = if r.mean_uncertainty.is_nan() { String::new() } else { r.mean_uncertainty.to_string() };
        writeln!(f, "{},{},{},{},{}", r.round, chosen, r.cd, r.psnr, mu)?;
    }
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{fibonacci_sphere, Intrinsics};

    fn cams(n: usize) -> Vec<CameraView> {
        fibonacci_sphere(n)
            .into_iter()
            .enumerate()
            .map(|(i, d)| CameraView::look_at(i as u32, d * 3.0, Vec3::zeros(), Vec3::z(), Intrinsics::from_fov(8, 8, 45.0), 8, 8))
            .collect()
    }

    #[test]
    fn pool_of_forty_in_eight_regions() {
        let p = init_pool(cams(40), Vec3::zeros(), 8, 1).unwrap();
        assert_eq!(p.indices(ViewStatus::Training).len(), 8);
        assert_eq!(p.indices(ViewStatus::Test).len(), 8);
        for r in 0..8 {
            assert!(p.region.iter().filter(|&&x| x == r).count() >= 2);
        }
        let q = init_pool(cams(40), Vec3::zeros(), 8, 1).unwrap();
        assert_eq!(p.status, q.status);
        let one = init_pool(cams(40), Vec3::zeros(), 1, 3).unwrap();
        assert_eq!(one.indices(ViewStatus::Training).len(), 1);
        assert_eq!(one.indices(ViewStatus::Test).len(), 1);
    }

    #[test]
    fn pool_errors() {
        assert!(matches!(init_pool(cams(5), Vec3::zeros(), 4, 0), Err(NbvError::TooFewCandidates { .. })));
        assert!(matches!(init_pool(cams(5), Vec3::zeros(), 0, 0), Err(NbvError::NoRegions)));
    }

    #[test]
    fn scores() {
        assert_eq!(score_view(&[Some(0.5), None, Some(0.5)], ScoreMode::Mean), 0.5);
        assert_eq!(score_view(&[None, None], ScoreMode::Mean), 0.0);
        assert_eq!(score_view(&[Some(0.1), Some(0.7)], ScoreMode::Max), 0.7);
        assert_eq!(argmax_by_score(&[(3, 0, 1.0), (1, 1, 1.0), (2, 2, 0.5)]), Some(1));
        assert_eq!(argmax_by_score(&[]), None);
    }

    #[test]
    fn psnr_closed_form() {
        let a = RgbImage::new(4, 4, [0.2; 3]);
        let b = RgbImage::new(4, 4, [0.7; 3]);
        assert!((psnr(&a, &b, 100.0) - 10.0 * 4f64.log10()).abs() < 1e-6);
        assert_eq!(psnr(&a, &a, 80.0), 80.0);
    }

    #[test]
    fn regions_cover_both_bands() {
        assert_eq!(region_of(&Vec3::new(1.0, 0.01, 0.5), 4), 0);
        assert_eq!(region_of(&Vec3::new(-1.0, -0.01, 0.5), 4), 1);
        assert_eq!(region_of(&Vec3::new(1.0, 0.01, -0.5), 4), 2);
        assert_eq!(region_of(&Vec3::new(1.0, 0.01, -0.5), 3), 0);
    }
}
