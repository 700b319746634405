use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate, reference_patch, sample_patch, score_against, Occlusion, PairScore};
use crate::raster::GrayImage;
use crate::scene::{CameraView, SdfField};
use crate::surface::{find_zero_crossing, sphere_trace, Ray, SurfacePoint, TraceParams};
use crate::BoundingSphere;

/// Intersection routine used while generating labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntersectMode {
    /// Sampled-ray linear-interpolation root finding.
    ZeroCrossing,
    SphereTrace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelParams {
    pub patch_size: usize,
    pub k_best: usize,
    pub occlusion: bool,
    pub occlusion_offset: f64,
    pub n_samples: usize,
    pub trace: TraceParams,
    pub mode: IntersectMode,
}

impl Default for LabelParams {
    fn default() -> Self {
        Self {
            patch_size: 11,
            k_best: 4,
            occlusion: true,
            occlusion_offset: 0.03,
            n_samples: 128,
            trace: TraceParams::default(),
            mode: IntersectMode::ZeroCrossing,
        }
    }
}

/// A pixel ray of view `view` (index into the view list).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RaySample {
    pub view: usize,
    pub x: u32,
    pub y: u32,
}

/// A surface point and its aggregated consistency score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub point: SurfacePoint,
    pub ray: RaySample,
    /// Mean of the lowest pair scores, in `[0, 2]`.
    pub score: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LabelStats {
    pub rays: usize,
    pub misses: usize,
    pub outside_margin: usize,
    pub no_valid_pairs: usize,
    pub labels: usize,
}

/// Uniformly drawn pixel rays; with a margin so reference patches fit.
pub fn pixel_rays<R: Rng>(rng: &mut R, views: &[CameraView], count: usize, margin: usize) -> Vec<RaySample> {
    (0..count)
        .map(|_| {
            let view = rng.random_range(0..views.len());
            let v = &views[view];
            let m = margin.min((v.width - 1) / 2).min((v.height - 1) / 2) as u32;
            RaySample {
                view,
                x: rng.random_range(m..v.width as u32 - m),
                y: rng.random_range(m..v.height as u32 - m),
            }
        })
        .collect()
}

/// Intersects one pixel ray with `field` inside `bounds`.
pub fn intersect_pixel(field: &dyn SdfField, view: &CameraView, bounds: &BoundingSphere, x: u32, y: u32, params: &LabelParams) -> Option<SurfacePoint> {
    let (o, d) = view.pixel_ray(x as f64, y as f64);
    let (t0, t1) = bounds.ray_interval(&o, &d)?;
    let ray = Ray::new(o, d, t0, t1).ok()?;
    let mut sp = match params.mode {
        IntersectMode::ZeroCrossing => find_zero_crossing(field, &ray, params.n_samples),
        IntersectMode::SphereTrace => sphere_trace(field, &ray, &params.trace).hit,
    }?;
    sp.view_id = Some(view.id);
    Some(sp)
}

#[derive(Debug, Clone, Copy)]
enum Outcome {
    Miss,
    Margin,
    NoPairs,
    Label(PseudoLabel),
}

fn label_one(
    views: &[CameraView],
    gray: &[GrayImage],
    field: &dyn SdfField,
    bounds: &BoundingSphere,
    r: RaySample,
    params: &LabelParams,
) -> Outcome {
    let reference = &views[r.view];
    let Some(sp) = intersect_pixel(field, reference, bounds, r.x, r.y, params) else { return Outcome::Miss };
    let Some(patch) = reference_patch(&sp, reference, params.patch_size) else { return Outcome::Margin };
    let ref_values = sample_patch(&gray[r.view], &patch).values;
    let occ = params.occlusion.then_some(Occlusion { field, offset: params.occlusion_offset, trace: params.trace });
    let scores: Vec<PairScore> = views
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != r.view)
        .map(|(j, src)| score_against(&sp, &patch, &ref_values, reference, src, &gray[j], occ.as_ref()))
        .collect();
    match aggregate(&scores, params.k_best) {
        Some((score, count)) => Outcome::Label(PseudoLabel { point: sp, ray: r, score, count }),
        None => Outcome::NoPairs,
    }
}

/// Per-pixel memo of label outcomes.
///
/// Geometry, images and parameters are frozen while a grid is being
/// distilled, so the label of a pixel ray is a pure function of the pixel.
/// Caching it changes nothing but the running time. A cache must only be
/// reused with the exact inputs it was first filled with.
pub struct LabelCache {
    offsets: Vec<usize>,
    slots: Vec<OnceLock<Outcome>>,
}

impl LabelCache {
    pub fn new(views: &[CameraView]) -> Self {
        let mut offsets = Vec::with_capacity(views.len());
        let mut total = 0;
        for v in views {
            offsets.push(total);
            total += v.width * v.height;
        }
        Self { offsets, slots: (0..total).map(|_| OnceLock::new()).collect() }
    }

    /// Number of pixels whose label has been computed.
    pub fn filled(&self) -> usize {
        self.slots.iter().filter(|s| s.get().is_some()).count()
    }

    fn slot(&self, views: &[CameraView], r: &RaySample) -> &OnceLock<Outcome> {
        &self.slots[self.offsets[r.view] + r.y as usize * views[r.view].width + r.x as usize]
    }
}

/// Pseudo labels for a batch of pixel rays. Every view other than the ray's
/// own acts as a source. Output is ordered by (view id, pixel index).
pub fn generate_pseudo_labels(
    views: &[CameraView],
    gray: &[GrayImage],
    field: &dyn SdfField,
    bounds: &BoundingSphere,
    rays: &[RaySample],
    params: &LabelParams,
) -> (Vec<PseudoLabel>, LabelStats) {
    generate_pseudo_labels_cached(views, gray, field, bounds, rays, params, None)
}

/// [`generate_pseudo_labels`] with an optional per-pixel memo.
pub fn generate_pseudo_labels_cached(
    views: &[CameraView],
    gray: &[GrayImage],
    field: &dyn SdfField,
    bounds: &BoundingSphere,
    rays: &[RaySample],
    params: &LabelParams,
    cache: Option<&LabelCache>,
) -> (Vec<PseudoLabel>, LabelStats) {
    assert_eq!(views.len(), gray.len(), "one gray image per view");
    let outcomes: Vec<Outcome> = rays
        .par_iter()
        .map(|r| match cache {
            Some(c) => *c.slot(views, r).get_or_init(|| label_one(views, gray, field, bounds, *r, params)),
            None => label_one(views, gray, field, bounds, *r, params),
        })
        .collect();
    let mut stats = LabelStats { rays: rays.len(), ..Default::default() };
    let mut labels = Vec::with_capacity(rays.len());
    for o in outcomes {
        match o {
            Outcome::Miss => stats.misses += 1,
            Outcome::Margin => stats.outside_margin += 1,
            Outcome::NoPairs => stats.no_valid_pairs += 1,
            Outcome::Label(l) => labels.push(l),
        }
    }
    labels.sort_by_key(|l| (views[l.ray.view].id, l.ray.y as usize * views[l.ray.view].width + l.ray.x as usize));
    stats.labels = labels.len();
    (labels, stats)
}

/// `x,y,z,G,count` rows.
pub fn write_labels_csv(path: &Path, labels: &[PseudoLabel]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "x,y,z,G,count")?;
    for l in labels {
        let p = l.point.position;
        writeln!(f, "{},{},{},{},{}", p.x, p.y, p.z, l.score, l.count)?;
    }
    f.flush()
}
