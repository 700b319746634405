//! The distilled uncertainty field and its training loops.
//!
//! Uncertainty lives on a dense node grid evaluated trilinearly. Training
//! minimizes the mean absolute difference between the field and pseudo
//! labels at their surface points with Adam, projecting every node back
//! into `[0, 2]` after each step. Because the loss is L1, a node that only
//! ever sees one multiset of labels converges to its (weighted) median.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::{generate_pseudo_labels_cached, pixel_rays, IntersectMode, LabelCache, LabelParams};
use crate::grid::{self, GridError, GridSpec};
use crate::raster::GrayImage;
use crate::scene::{CameraView, SdfField};
use crate::{Aabb, BoundingSphere, Vec3};

/// Upper end of the label range; `1 − SSIM` never exceeds it.
pub const U_MAX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum UncertaintyError {
    #[error("distillation batch is empty")]
    EmptyBatch,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no views to draw rays from")]
    NoViews,
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Node values of the uncertainty field.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl UncertaintyGrid {
    /// A grid filled with `init`, clamped into `[0, 2]`. The box is rounded to
    /// `f32` like every on-disk grid.
    pub fn new(dims: [usize; 3], bbox: Aabb, init: f64) -> Result<Self, GridError> {
        let bbox = Aabb::new(bbox.min.map(|v| v as f32 as f64), bbox.max.map(|v| v as f32 as f64));
        let spec = GridSpec::new(dims, bbox)?;
        Ok(Self { spec, values: vec![init.clamp(0.0, U_MAX); spec.len()] })
    }

    /// Trilinear value at `x`; points outside the box are clamped onto it.
    pub fn eval(&self, x: &Vec3) -> f64 {
        grid::trilinear(&self.spec, &self.values, x)
    }

    pub fn eval_with_gradient(&self, x: &Vec3) -> (f64, Vec3) {
        grid::trilinear_with_gradient(&self.spec, &self.values, x)
    }

    pub fn project(&mut self) {
        for v in &mut self.values {
            *v = v.clamp(0.0, U_MAX);
        }
    }

    /// Writes the `UNCG` file. Values are stored as `f32`.
    pub fn save(&self, path: &Path) -> Result<(), GridError> {
        let v: Vec<f32> = self.values.iter().map(|&x| x as f32).collect();
        grid::write_grid_file(path, b"UNCG", &self.spec, &v)
    }

    pub fn load(path: &Path) -> Result<Self, GridError> {
        let (spec, values) = grid::read_grid_file(path, b"UNCG")?;
        Ok(Self { spec, values: values.into_iter().map(f64::from).collect() })
    }
}

/// A distillation target: a surface point and the label it should read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub point: Vec3,
    pub value: f64,
}

/// Mean absolute error of `grid` over `batch`, accumulating its gradient with
/// respect to the node values into `grad` (which is not cleared first).
///
/// The subgradient of `|r|` at `r = 0` is taken as 0.
pub fn distill_loss_into(grid: &UncertaintyGrid, batch: &[Target], grad: &mut [f64]) -> Result<f64, UncertaintyError> {
    if batch.is_empty() {
        return Err(UncertaintyError::EmptyBatch);
    }
    assert_eq!(grad.len(), grid.values.len());
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for t in batch {
        let st = grid.spec.stencil(&t.point);
        let u: f64 = (0..8).map(|c| st.weight[c] * grid.values[st.index[c]]).sum();
        let r = u - t.value;
        loss += r.abs();
        let s = if r > 0.0 {
            inv
        } else if r < 0.0 {
            -inv
        } else {
            0.0
        };
        if s != 0.0 {
            for c in 0..8 {
                grad[st.index[c]] += s * st.weight[c];
            }
        }
    }
    Ok(loss * inv)
}

/// Loss and dense gradient.
pub fn distill_loss(grid: &UncertaintyGrid, batch: &[Target]) -> Result<(f64, Vec<f64>), UncertaintyError> {
    let mut g = vec![0.0; grid.values.len()];
    let l = distill_loss_into(grid, batch, &mut g)?;
    Ok((l, g))
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (self.beta1, self.beta2);
        for i in 0..params.len() {
            let g = grad[i];
            let m = b1 * self.m[i] + (1.0 - b1) * g;
            let v = b2 * self.v[i] + (1.0 - b2) * g * g;
            self.m[i] = m;
            self.v[i] = v;
            if m != 0.0 {
                params[i] -= self.lr * (m / c1) / ((v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Settings of both training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Pixel rays drawn per step.
    pub batch_rays: usize,
    pub steps_stage1: usize,
    pub steps_finetune: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Initial node value, also what never-supervised regions keep.
    pub init_value: f64,
    /// Grid resolution per axis; the box is the reconstruction's.
    pub dims: usize,
    /// Memoize labels per pixel (see [`LabelCache`]).
    pub cache_labels: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_rays: 1024,
            steps_stage1: 5000,
            steps_finetune: 1000,
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            init_value: 1.0,
            dims: 64,
            cache_labels: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), UncertaintyError> {
        let bad = |m: &str| Err(UncertaintyError::Config(m.into()));
        if self.batch_rays == 0 {
            return bad("batch_rays must be > 0");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be > 0");
        }
        if !(0.0..=U_MAX).contains(&self.init_value) {
            return bad("init_value must lie in [0, 2]");
        }
        if self.dims < 2 {
            return bad("dims must be >= 2");
        }
        Ok(())
    }

    pub fn optimizer(&self, n: usize) -> Adam {
        Adam::new(n, self.lr, self.beta1, self.beta2, self.eps)
    }
}

/// One row of the loss trace. Skipped steps carry `loss = NaN` and zero labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub valid_labels: usize,
}

impl LossRecord {
    pub fn skipped(&self) -> bool {
        self.valid_labels == 0
    }
}

/// Runs `steps` optimizer steps, asking `source` for a fresh batch each step.
pub fn train(
    grid: &mut UncertaintyGrid,
    opt: &mut Adam,
    steps: usize,
    step_offset: usize,
    mut source: impl FnMut(usize) -> Vec<Target>,
) -> Vec<LossRecord> {
    let mut grad = vec![0.0; grid.values.len()];
    let mut trace = Vec::with_capacity(steps);
    for s in 0..steps {
        let step = step_offset + s;
        let batch = source(step);
        grad.iter_mut().for_each(|g| *g = 0.0);
        match distill_loss_into(grid, &batch, &mut grad) {
            Ok(loss) => {
                opt.step(&mut grid.values, &grad);
                grid.project();
                trace.push(LossRecord { step, loss, valid_labels: batch.len() });
            }
            Err(_) => trace.push(LossRecord { step, loss: f64::NAN, valid_labels: 0 }),
        }
    }
    trace
}

/// Everything label generation needs, borrowed from a dataset.
pub struct LabelContext<'a> {
    pub views: &'a [CameraView],
    pub gray: &'a [GrayImage],
    pub field: &'a dyn SdfField,
    pub bounds: &'a BoundingSphere,
    pub params: LabelParams,
}

impl LabelContext<'_> {
    /// Online label source: every step draws `batch` new pixel rays from a
    /// stream seeded by `seed` and labels them.
    pub fn source<'c>(&'c self, batch: usize, seed: u64, cache: Option<&'c LabelCache>) -> impl FnMut(usize) -> Vec<Target> + 'c {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        move |_| {
            let rays = pixel_rays(&mut rng, self.views, batch, self.params.patch_size / 2);
            let (labels, _) = generate_pseudo_labels_cached(self.views, self.gray, self.field, self.bounds, &rays, &self.params, cache);
            labels.into_iter().map(|l| Target { point: l.point.position, value: l.score }).collect()
        }
    }
}

fn run_stage(grid: &mut UncertaintyGrid, opt: &mut Adam, ctx: &LabelContext<'_>, cfg: &TrainConfig, steps: usize, offset: usize, seed: u64) -> Vec<LossRecord> {
    let cache = cfg.cache_labels.then(|| LabelCache::new(ctx.views));
    let source = ctx.source(cfg.batch_rays, seed, cache.as_ref());
    train(grid, opt, steps, offset, source)
}

/// Stage 1: labels on the raw images, points from sampled-ray root finding.
pub fn train_stage1(ctx: &LabelContext<'_>, grid: &mut UncertaintyGrid, cfg: &TrainConfig) -> Result<(Adam, Vec<LossRecord>), UncertaintyError> {
    cfg.validate()?;
    if ctx.views.is_empty() {
        return Err(UncertaintyError::NoViews);
    }
    let ctx = LabelContext { params: LabelParams { mode: IntersectMode::ZeroCrossing, ..ctx.params }, ..*ctx };
    let mut opt = cfg.optimizer(grid.values.len());
    let trace = run_stage(grid, &mut opt, &ctx, cfg, cfg.steps_stage1, 0, cfg.seed);
    Ok((opt, trace))
}

/// Stage 2: continues from stage 1 with labels computed on the processed
/// images (`ctx.gray`) and points found by sphere tracing.
pub fn finetune_stage2(ctx: &LabelContext<'_>, grid: &mut UncertaintyGrid, opt: &mut Adam, cfg: &TrainConfig) -> Result<Vec<LossRecord>, UncertaintyError> {
    cfg.validate()?;
    if ctx.views.is_empty() {
        return Err(UncertaintyError::NoViews);
    }
    if cfg.steps_finetune == 0 {
        return Ok(Vec::new());
    }
    let ctx = LabelContext { params: LabelParams { mode: IntersectMode::SphereTrace, ..ctx.params }, ..*ctx };
    let seed = cfg.seed ^ 0x9E37_79B9_7F4A_7C15;
    Ok(run_stage(grid, opt, &ctx, cfg, cfg.steps_finetune, cfg.steps_stage1, seed))
}

/// Label source that draws uniformly (with replacement) from a fixed set.
pub fn fixed_source(targets: Vec<Target>, batch: usize, seed: u64) -> impl FnMut(usize) -> Vec<Target> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    move |_| {
        if targets.is_empty() {
            return Vec::new();
        }
        (0..batch).map(|_| targets[rng.random_range(0..targets.len())]).collect()
    }
}

/// `step,loss,valid_labels` rows.
pub fn write_loss_csv(path: &Path, trace: &[LossRecord]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,loss,valid_labels")?;
    for r in trace {
        writeln!(f, "{},{},{}", r.step, r.loss, r.valid_labels)?;
    }
    f.flush()
}
