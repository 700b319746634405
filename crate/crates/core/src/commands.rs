//! The CLI commands as library functions. Each one reads its inputs from
//! disk, writes its artifacts into an output directory and returns a summary.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::consistency::{generate_pseudo_labels, pixel_rays, write_labels_csv, LabelStats};
use crate::decouple::{decouple_images, fit_decoupled};
use crate::eval::{evaluate, point_errors, spearman, ause_of, AuseReport, EvalCurves, EvalInput, SparsificationCurve};
use crate::nbv::{heat_map, init_pool, render_uncertainty_map, run_incremental, write_trajectory_csv, NbvConfig, RoundRecord, ViewStatus};
use crate::raster::GrayImage;
use crate::scene::presets::generate_dataset;
use crate::scene::{save_image_set, SceneDataset};
use crate::uncertainty::{finetune_stage2, train_stage1, write_loss_csv, LabelContext, LossRecord, TrainConfig, UncertaintyGrid};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage}: {reason}")]
    Stage { stage: &'static str, reason: String },
}

impl CommandError {
    /// 2 for bad configuration, 3 for failures while running a stage.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Stage { .. } => 3,
        }
    }
}

fn stage(stage: &'static str) -> impl Fn(&dyn std::fmt::Display) -> CommandError {
    move |e| CommandError::Stage { stage, reason: e.to_string() }
}

fn create_dir(dir: &Path) -> Result<(), CommandError> {
    std::fs::create_dir_all(dir).map_err(|e| stage("output")(&format!("{}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CommandError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| stage("output")(&e))?;
    std::fs::write(path, text).map_err(|e| stage("output")(&format!("{}: {e}", path.display())))
}

fn load_dataset(dir: &Path) -> Result<SceneDataset, CommandError> {
    SceneDataset::load(dir).map_err(|e| stage("dataset")(&e))
}

fn gray_images(ds: &SceneDataset) -> Result<Vec<GrayImage>, CommandError> {
    ds.views
        .iter()
        .map(|v| v.image.as_ref().map(|i| i.to_gray()).ok_or_else(|| stage("dataset")(&format!("view {} has no image", v.id))))
        .collect()
}

/// Training settings with the run seed folded in.
fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig { seed: cfg.train.seed.wrapping_add(cfg.seed), ..cfg.train.clone() }
}

/// Renders the rig, builds the reconstruction and writes the dataset.
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<SceneDataset, CommandError> {
    cfg.validate()?;
    let spec = cfg.scene_spec()?;
    let ds = generate_dataset(&spec, &cfg.rig, cfg.seed).map_err(|e| stage("gen")(&e))?;
    ds.validate().map_err(|e| stage("gen")(&e))?;
    create_dir(out)?;
    ds.save(out).map_err(|e| stage("gen")(&e))?;
    Ok(ds)
}

/// Labels `cfg.labels.rays` random pixel rays of the dataset and writes them as CSV.
pub fn cmd_labels(cfg: &RunConfig, dataset: &Path, out_csv: &Path) -> Result<LabelStats, CommandError> {
    cfg.validate_common()?;
    let ds = load_dataset(dataset)?;
    let gray = gray_images(&ds)?;
    let params = cfg.consistency.params();
    let rays = if cfg.labels.rays == 0 || ds.views.is_empty() {
        Vec::new()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        pixel_rays(&mut rng, &ds.views, cfg.labels.rays, params.patch_size / 2)
    };
    let (labels, stats) = generate_pseudo_labels(&ds.views, &gray, &ds.recon, &ds.scene.bounds, &rays, &params);
    if let Some(dir) = out_csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_labels_csv(out_csv, &labels).map_err(|e| stage("labels")(&e))?;
    Ok(stats)
}

/// Grids and loss traces of a distillation run.
#[derive(Debug, Clone)]
pub struct DistillResult {
    pub stage1: UncertaintyGrid,
    /// The fine-tuned grid; `None` without fine-tuning.
    pub finetuned: Option<UncertaintyGrid>,
    pub trace: Vec<LossRecord>,
}

impl DistillResult {
    pub fn final_grid(&self) -> &UncertaintyGrid {
        self.finetuned.as_ref().unwrap_or(&self.stage1)
    }
}

/// Stage 1 and, if `processed` is given, fine-tuning on those images.
pub fn distill(ds: &SceneDataset, gray: &[GrayImage], processed: Option<&[GrayImage]>, cfg: &RunConfig) -> Result<DistillResult, CommandError> {
    let tc = train_config(cfg);
    let ctx = LabelContext { views: &ds.views, gray, field: &ds.recon, bounds: &ds.scene.bounds, params: cfg.consistency.params() };
    let mut grid = UncertaintyGrid::new([tc.dims; 3], ds.recon.spec.bbox, tc.init_value).map_err(|e| stage("distill")(&e))?;
    let (mut opt, mut trace) = train_stage1(&ctx, &mut grid, &tc).map_err(|e| stage("distill")(&e))?;
    let finetuned = match processed {
        Some(pg) => {
            let mut g = grid.clone();
            let ctx = LabelContext { gray: pg, ..ctx };
            trace.extend(finetune_stage2(&ctx, &mut g, &mut opt, &tc).map_err(|e| stage("finetune")(&e))?);
            Some(g)
        }
        None => None,
    };
    Ok(DistillResult { stage1: grid, finetuned, trace })
}

/// Removes the fitted view-dependent color from every view. Returns the
/// processed images as gray plus the RGB images to save.
fn decouple(ds: &SceneDataset, cfg: &RunConfig) -> Result<(Vec<GrayImage>, Vec<crate::raster::RgbImage>, Vec<crate::raster::RgbImage>), CommandError> {
    let dcfg = crate::decouple::DecoupleConfig { seed: cfg.decouple.seed.wrapping_add(cfg.seed), ..cfg.decouple };
    let spec = ds.recon.spec;
    let dec = fit_decoupled(&ds.views, &ds.recon, &ds.scene.bounds, spec.dims, spec.bbox, &dcfg).map_err(|e| stage("decouple")(&e))?;
    let (processed, vds) = decouple_images(&ds.views, &ds.recon, &ds.scene.bounds, &dec).map_err(|e| stage("decouple")(&e))?;
    Ok((processed.iter().map(|i| i.to_gray()).collect(), processed, vds))
}

/// Writes `uncertainty.uncg` and `loss.csv`; with `finetune` also
/// `uncertainty_stage1.uncg`, `images_decoupled/` and `vd/`.
pub fn cmd_distill(cfg: &RunConfig, dataset: &Path, out: &Path, finetune: bool) -> Result<DistillResult, CommandError> {
    cfg.validate_common()?;
    let ds = load_dataset(dataset)?;
    let gray = gray_images(&ds)?;
    create_dir(out)?;
    let processed = if finetune {
        let (pg, images, vds) = decouple(&ds, cfg)?;
        save_image_set(out, "images_decoupled", &ds.views, &images).map_err(|e| stage("output")(&e))?;
        save_image_set(out, "vd", &ds.views, &vds).map_err(|e| stage("output")(&e))?;
        Some(pg)
    } else {
        None
    };
    let res = distill(&ds, &gray, processed.as_deref(), cfg)?;
    let save = |g: &UncertaintyGrid, name: &str| g.save(&out.join(name)).map_err(|e| stage("output")(&e));
    save(res.final_grid(), "uncertainty.uncg")?;
    if res.finetuned.is_some() {
        save(&res.stage1, "uncertainty_stage1.uncg")?;
    }
    write_loss_csv(&out.join("loss.csv"), &res.trace).map_err(|e| stage("output")(&e))?;
    Ok(res)
}

#[derive(Serialize)]
struct EvalReportFile<'a> {
    #[serde(flatten)]
    report: &'a AuseReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    elapsed_s: Option<f64>,
}

fn write_curves_csv(path: &Path, curves: &EvalCurves) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "fraction,mae_by_gt,mae_by_unc,mse_by_gt,mse_by_unc,err3d_by_gt,err3d_by_unc")?;
    let all: [&SparsificationCurve; 3] = [&curves.mae, &curves.mse, &curves.points];
    for i in 0..curves.mae.fractions.len() {
        write!(f, "{}", curves.mae.fractions[i])?;
        for c in all {
            write!(f, ",{},{}", c.by_gt[i], c.by_unc[i])?;
        }
        writeln!(f)?;
    }
    f.flush()
}

/// Writes `report.json` and `curves.csv`.
pub fn cmd_eval(cfg: &RunConfig, dataset: &Path, grid_path: &Path, out: &Path) -> Result<AuseReport, CommandError> {
    cfg.validate_common()?;
    let started = Instant::now();
    if !grid_path.is_file() {
        return Err(stage("eval")(&format!("grid file {} does not exist", grid_path.display())));
    }
    let grid = UncertaintyGrid::load(grid_path).map_err(|e| stage("eval")(&e))?;
    let ds = load_dataset(dataset)?;
    let input = EvalInput { gt: &ds.scene.sdf, recon: &ds.recon, views: &ds.views, bounds: &ds.scene.bounds };
    let (report, curves) = evaluate(&input, &grid, &cfg.eval).map_err(|e| stage("eval")(&e))?;
    create_dir(out)?;
    let elapsed_s = (!cfg.deterministic).then(|| started.elapsed().as_secs_f64());
    write_json(&out.join("report.json"), &EvalReportFile { report: &report, elapsed_s })?;
    write_curves_csv(&out.join("curves.csv"), &curves).map_err(|e| stage("output")(&e))?;
    Ok(report)
}

/// Runs the incremental loop with the dataset's views as the candidate pool
/// and writes `trajectory.csv`; with `heatmaps`, also one PNG per round and
/// test view under `heatmaps/`.
pub fn cmd_nbv(cfg: &RunConfig, dataset: &Path, out: &Path, heatmaps: bool) -> Result<Vec<RoundRecord>, CommandError> {
    cfg.validate_common()?;
    let ds = load_dataset(dataset)?;
    if ds.views.iter().any(|v| v.image.is_none() || v.depth.is_none()) {
        return Err(stage("nbv")(&"every candidate view needs an image and a depth map"));
    }
    let ncfg = NbvConfig { seed: cfg.nbv.seed.wrapping_add(cfg.seed), ..cfg.nbv.clone() };
    let pool = init_pool(ds.views.clone(), ds.scene.bounds.center, ncfg.n_regions, ncfg.seed).map_err(|e| stage("nbv")(&e))?;
    create_dir(out)?;
    let heat_dir = out.join("heatmaps");
    if heatmaps {
        create_dir(&heat_dir)?;
    }
    let mut hook_err: Option<String> = None;
    let bounds = ds.scene.bounds;
    let mut hook = |round: usize, pool: &crate::nbv::ViewPool, grid: Option<&UncertaintyGrid>, recon: &crate::scene::VoxelSdf| {
        let Some(grid) = grid else { return };
        for i in pool.indices(ViewStatus::Test) {
            let v = &pool.views[i];
            let map = render_uncertainty_map(v, grid, recon, &bounds);
            let p = heat_dir.join(format!("round_{round:02}_view_{:04}.png", v.id));
            if let Err(e) = heat_map(&map, v.width, v.height).save_png(&p) {
                hook_err.get_or_insert(e);
            }
        }
    };
    let result = if heatmaps { run_incremental(&ds.scene, pool, &ncfg, Some(&mut hook)) } else { run_incremental(&ds.scene, pool, &ncfg, None) };
    let csv = out.join("trajectory.csv");
    match result {
        Ok(state) => {
            write_trajectory_csv(&csv, &state.trajectory).map_err(|e| stage("output")(&e))?;
            if let Some(e) = hook_err {
                return Err(stage("output")(&e));
            }
            Ok(state.trajectory)
        }
        Err((e, partial)) => {
            // keep what was measured before the failure
            write_trajectory_csv(&csv, &partial).map_err(|e| stage("output")(&e))?;
            Err(stage("nbv")(&e))
        }
    }
}

/// One variant of the ablation sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub patch_size: usize,
    pub decouple: bool,
    pub ause_3d: f64,
    pub spearman: f64,
    pub n_points: usize,
    pub config_hash: String,
}

/// The configuration that describes a single ablation variant.
pub fn variant_config(cfg: &RunConfig, patch_size: usize, decouple: bool) -> RunConfig {
    let mut v = cfg.clone();
    v.consistency.patch_size = patch_size;
    v.ablate.patch_sizes = vec![patch_size];
    v.ablate.decouple = vec![decouple];
    if !decouple {
        v.train.steps_finetune = 0;
    }
    v
}

/// Sweeps patch size × decoupling on one dataset. "Decouple off" is the
/// stage-1 grid alone; "on" continues it on the decoupled images.
pub fn ablate(ds: &SceneDataset, cfg: &RunConfig) -> Result<Vec<AblationRow>, CommandError> {
    let gray = gray_images(ds)?;
    let processed = if cfg.ablate.decouple.contains(&true) { Some(decouple(ds, cfg)?.0) } else { None };
    let input = EvalInput { gt: &ds.scene.sdf, recon: &ds.recon, views: &ds.views, bounds: &ds.scene.bounds };
    let score = |g: &UncertaintyGrid| -> Result<(f64, f64, usize), CommandError> {
        let (_, err, unc) = point_errors(&input, g, cfg.eval.point_stride);
        let (a, _) = ause_of(&err, &unc).map_err(|e| stage("eval")(&e))?;
        Ok((a, spearman(&unc, &err), err.len()))
    };
    let mut rows = Vec::new();
    for &k in &cfg.ablate.patch_sizes {
        let kc = variant_config(cfg, k, true);
        let with_ft = cfg.ablate.decouple.contains(&true);
        let res = distill(ds, &gray, if with_ft { processed.as_deref() } else { None }, &kc)?;
        for &d in &cfg.ablate.decouple {
            let g = if d { res.final_grid() } else { &res.stage1 };
            let (ause_3d, rho, n) = score(g)?;
            rows.push(AblationRow { patch_size: k, decouple: d, ause_3d, spearman: rho, n_points: n, config_hash: variant_config(cfg, k, d).hash() });
        }
    }
    Ok(rows)
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "patch_size,decouple,ause_3d,spearman,n_points,config_hash")?;
    for r in rows {
        writeln!(f, "{},{},{},{},{},{}", r.patch_size, r.decouple, r.ause_3d, r.spearman, r.n_points, r.config_hash)?;
    }
    f.flush()
}

/// Writes `ablation.csv`. Without `dataset`, a dataset is generated from the
/// config into `out/dataset` first.
pub fn cmd_ablate(cfg: &RunConfig, dataset: Option<&Path>, out: &Path) -> Result<Vec<AblationRow>, CommandError> {
    cfg.validate_common()?;
    create_dir(out)?;
    let ds = match dataset {
        Some(d) => load_dataset(d)?,
        None => {
            let dir: PathBuf = out.join("dataset");
            cmd_gen(cfg, &dir)?
        }
    };
    let rows = ablate(&ds, cfg)?;
    write_ablation_csv(&out.join("ablation.csv"), &rows).map_err(|e| stage("output")(&e))?;
    Ok(rows)
}
