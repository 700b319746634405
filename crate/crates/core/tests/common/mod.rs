//! Independent reference implementations used as test oracles. They are
//! deliberately naive: direct geometry, exhaustive search, O(n²) loops.
#![allow(dead_code)]

use geounc::scene::{CameraView, Intrinsics, SdfField};
use geounc::surface::Ray;
use geounc::uncertainty::{distill_loss, Target, UncertaintyGrid, U_MAX};
use geounc::{Aabb, Mat3, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Lifts reference pixel `(u, v)` onto the plane `n·x + d = 0` (world frame)
/// and projects the 3D point into `source`.
pub fn lift_transform_project(reference: &CameraView, source: &CameraView, n: &Vec3, d: f64, u: f64, v: f64) -> Option<(f64, f64)> {
    let (o, dir) = reference.pixel_ray(u, v);
    let denom = n.dot(&dir);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = -(n.dot(&o) + d) / denom;
    let x = o + dir * t;
    let pc = source.rotation * x + source.translation;
    let k = &source.intrinsics;
    Some((k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy))
}

/// Applies `h` to a pixel homogeneously.
pub fn apply_h(h: &Mat3, u: f64, v: f64) -> (f64, f64) {
    let p = h * Vec3::new(u, v, 1.0);
    (p.x / p.z, p.y / p.z)
}

/// Camera at `eye` looking at `target` with a random but well-conditioned up vector.
pub fn random_camera<R: Rng>(rng: &mut R, id: u32, eye: Vec3, target: Vec3, w: usize, h: usize) -> CameraView {
    let fov = rng.random_range(30.0..70.0);
    let mut up = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let fwd = (target - eye).normalize();
    up -= fwd * fwd.dot(&up);
    if up.norm() < 1e-3 {
        up = fwd.cross(&Vec3::x());
    }
    CameraView::look_at(id, eye, target, up.normalize(), Intrinsics::from_fov(w, h, fov), w, h)
}

pub fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// First outside-to-inside crossing from `samples` uniform samples, refined
/// by bisection until the bracket is below `tol`.
pub fn bisection_first_crossing(field: &dyn SdfField, ray: &Ray, samples: usize, tol: f64) -> Option<f64> {
    let dt = ray.length() / (samples - 1) as f64;
    let mut prev = (ray.t_near, field.eval(&ray.at(ray.t_near)));
    for i in 1..samples {
        let t = ray.t_near + i as f64 * dt;
        let s = field.eval(&ray.at(t));
        if prev.1 > 0.0 && s <= 0.0 {
            let (mut lo, mut hi) = (prev.0, t);
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                if field.eval(&ray.at(mid)) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        prev = (t, s);
    }
    None
}

/// Sparsification by repeated selection: at each fraction, remove the
/// `floor(t n)` elements with the largest key (lowest index first on ties)
/// and average the rest; then the trapezoid area between the normalized
/// by-uncertainty and by-error curves.
pub fn brute_ause(errors: &[f64], unc: &[f64], fractions: &[f64]) -> f64 {
    let n = errors.len();
    let full = errors.iter().sum::<f64>() / n as f64;
    if full == 0.0 {
        return 0.0;
    }
    let remaining = |key: &[f64], t: f64| -> f64 {
        let k = ((t * n as f64 + 1e-9).floor() as usize).min(n);
        let mut removed = vec![false; n];
        for _ in 0..k {
            let mut best: Option<usize> = None;
            for i in 0..n {
                if !removed[i] && best.is_none_or(|b| key[i] > key[b]) {
                    best = Some(i);
                }
            }
            removed[best.unwrap()] = true;
        }
        let rest: Vec<f64> = (0..n).filter(|&i| !removed[i]).map(|i| errors[i]).collect();
        if rest.is_empty() {
            0.0
        } else {
            rest.iter().sum::<f64>() / rest.len() as f64
        }
    };
    let diff: Vec<f64> = fractions.iter().map(|&t| (remaining(unc, t) - remaining(errors, t)) / full).collect();
    (1..fractions.len()).map(|i| 0.5 * (diff[i] + diff[i - 1]) * (fractions[i] - fractions[i - 1])).sum()
}

/// Symmetric mean nearest-neighbor distance by exhaustive search.
pub fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    let one = |x: &[Vec3], y: &[Vec3]| {
        x.iter().map(|p| y.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt()).sum::<f64>() / x.len() as f64
    };
    0.5 * (one(a, b) + one(b, a))
}

/// Minimizer of `Σ w_i |u − g_i|` over a fine 1D scan of `[lo, hi]`.
pub fn brute_weighted_median(values: &[(f64, f64)], lo: f64, hi: f64, steps: usize) -> f64 {
    let cost = |u: f64| values.iter().map(|(g, w)| w * (u - g).abs()).sum::<f64>();
    (0..=steps).map(|i| lo + (hi - lo) * i as f64 / steps as f64).min_by(|a, b| cost(*a).total_cmp(&cost(*b))).unwrap()
}

/// A 5×4×6 grid with random values and a random batch of 1 to 63 labels.
pub fn random_instance(seed: u64) -> (UncertaintyGrid, Vec<Target>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bbox = Aabb::cube(Vec3::zeros(), 1.0);
    let mut g = UncertaintyGrid::new([5, 4, 6], bbox, 1.0).unwrap();
    for v in &mut g.values {
        *v = rng.random_range(0.2..1.8);
    }
    let batch = (0..rng.random_range(1..64))
        .map(|_| Target {
            point: Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            value: rng.random_range(0.0..U_MAX),
        })
        .collect();
    (g, batch)
}

/// Worst relative error between the analytic gradient and central
/// differences over 20 random parameters of one instance.
pub fn gradient_error(seed: u64) -> f64 {
    let (g, batch) = random_instance(seed);
    let (_, grad) = distill_loss(&g, &batch).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    // The loss is piecewise linear in every parameter, so central differences
    // are exact away from kinks and h can be large enough to keep rounding
    // error far below the tolerance.
    let h = 1e-4;
    let loss_at = |i: usize, x: f64| {
        let mut gg = g.clone();
        gg.values[i] = x;
        distill_loss(&gg, &batch).unwrap().0
    };
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 20 {
        let i = rng.random_range(0..g.values.len());
        let x = g.values[i];
        let (fm, f0, fp) = (loss_at(i, x - h), loss_at(i, x), loss_at(i, x + h));
        if ((fp - f0) - (f0 - fm)).abs() > 1e-12 {
            // a residual changes sign inside [x-h, x+h]: no derivative there
            continue;
        }
        let fd = (fp - fm) / (2.0 * h);
        let err = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max(err);
        checked += 1;
    }
    worst
}
