//! Ray–surface intersection on SDF fields.
//!
//! Two retrieval routes are provided: sampled-ray root finding with a single
//! linear interpolation between the bracketing samples, and sphere tracing.
//! Both return [`SurfacePoint`]s carrying a unit normal from the SDF gradient.

use thiserror::Error;

use crate::scene::SdfField;
use crate::Vec3;

#[derive(Debug, Error, PartialEq)]
pub enum SurfaceError {
    #[error("ray direction must be unit length (|v| = {0})")]
    NotUnit(f64),
    #[error("ray interval must satisfy t_near < t_far ({0} >= {1})")]
    EmptyInterval(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3, t_near: f64, t_far: f64) -> Result<Self, SurfaceError> {
        let n = dir.norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(SurfaceError::NotUnit(n));
        }
        if !(t_near < t_far) {
            return Err(SurfaceError::EmptyInterval(t_near, t_far));
        }
        Ok(Self { origin, dir, t_near, t_far })
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }

    pub fn length(&self) -> f64 {
        self.t_far - self.t_near
    }
}

/// A ray–surface intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub position: Vec3,
    /// Unit normal, the normalized SDF gradient.
    pub normal: Vec3,
    pub t: f64,
    /// Direction of the ray that produced the point.
    pub ray_dir: Vec3,
    pub view_id: Option<u32>,
    /// `|f(position)|`.
    pub residual: f64,
    /// The gradient vanished and `normal` fell back to `-ray_dir`.
    pub degenerate_normal: bool,
}

impl SurfacePoint {
    pub fn front_facing(&self) -> bool {
        self.normal.dot(&self.ray_dir) < 0.0
    }
}

/// SDF gradient at `x`; `h` is the finite-difference step for fields
/// without closed-form derivatives.
pub fn sdf_gradient(field: &dyn SdfField, x: &Vec3, h: f64) -> Vec3 {
    field.gradient(x, h)
}

/// Normalized gradient, or `-dir` flagged degenerate when `|∇f| < 1e-6`.
pub fn surface_normal(field: &dyn SdfField, p: &Vec3, dir: &Vec3) -> (Vec3, bool) {
    let g = field.gradient(p, field.natural_step());
    let n = g.norm();
    if n < 1e-6 || !n.is_finite() {
        (-dir, true)
    } else {
        (g / n, false)
    }
}

fn make_point(field: &dyn SdfField, ray: &Ray, t: f64, residual: f64) -> SurfacePoint {
    let position = ray.at(t);
    let (normal, degenerate) = surface_normal(field, &position, &ray.dir);
    SurfacePoint { position, normal, t, ray_dir: ray.dir, view_id: None, residual, degenerate_normal: degenerate }
}

/// Samples `f` at `n_samples` uniform parameters over the ray interval and
/// linearly interpolates the first outside-to-inside sign change:
/// `t* = (s_i t_{i+1} - s_{i+1} t_i) / (s_i - s_{i+1})`.
pub fn find_zero_crossing(field: &dyn SdfField, ray: &Ray, n_samples: usize) -> Option<SurfacePoint> {
    assert!(n_samples >= 2, "need at least two samples");
    let dt = ray.length() / (n_samples - 1) as f64;
    let t_of = |i: usize| if i == n_samples - 1 { ray.t_far } else { ray.t_near + i as f64 * dt };
    let mut t_prev = t_of(0);
    let mut s_prev = field.eval(&ray.at(t_prev));
    for i in 1..n_samples {
        let t = t_of(i);
        let s = field.eval(&ray.at(t));
        if s_prev > 0.0 && s <= 0.0 {
            let t_star = (s_prev * t - s * t_prev) / (s_prev - s);
            let residual = field.eval(&ray.at(t_star)).abs();
            return Some(make_point(field, ray, t_star, residual));
        }
        t_prev = t;
        s_prev = s;
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceParams {
    /// Hit threshold.
    pub epsilon: f64,
    pub max_steps: usize,
    /// Over-relaxation factor in `[1, 1.6]`; forced to 1 for fields that are
    /// not distance bounds.
    pub omega: f64,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self { epsilon: 1e-4, max_steps: 256, omega: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceOutcome {
    pub hit: Option<SurfacePoint>,
    pub steps: usize,
    /// The step budget ran out before a hit or exit (typical for grazing rays).
    pub exhausted: bool,
    /// The ray started inside the surface (`f(t_near) < -ε`).
    pub started_inside: bool,
}

/// Marches `t ← t + ω f(p(t))` from `t_near` until `f < ε` or the ray leaves
/// its interval. A step that lands deeper than `-ε` (possible on grids that
/// are not Lipschitz-1) is resolved by bisection back to `|f| < ε`.
pub fn sphere_trace(field: &dyn SdfField, ray: &Ray, params: &TraceParams) -> TraceOutcome {
    let eps = params.epsilon;
    let mut omega = if field.is_distance_bound() { params.omega.clamp(1.0, 1.6) } else { 1.0 };
    let mut t = ray.t_near;
    let mut prev_f = 0.0;
    let mut step = 0.0;
    let miss = |steps, exhausted, started_inside| TraceOutcome { hit: None, steps, exhausted, started_inside };
    for n in 0..params.max_steps {
        let f = field.eval(&ray.at(t));
        if omega > 1.0 && prev_f > 0.0 && f.abs() + prev_f < step {
            // over-relaxed step skipped past the unbounding sphere; redo it plainly
            t -= step;
            omega = 1.0;
            step = prev_f;
            t += step;
            continue;
        }
        if f < eps {
            if f > -eps {
                return TraceOutcome { hit: Some(make_point(field, ray, t, f.abs())), steps: n + 1, exhausted: false, started_inside: false };
            }
            if n == 0 {
                return miss(n + 1, false, true);
            }
            let (mut lo, mut hi) = (t - step, t);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let fm = field.eval(&ray.at(mid));
                if fm.abs() < eps {
                    return TraceOutcome { hit: Some(make_point(field, ray, mid, fm.abs())), steps: n + 1, exhausted: false, started_inside: false };
                }
                if fm > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return miss(n + 1, true, false);
        }
        prev_f = f;
        step = omega * f;
        t += step;
        if t > ray.t_far {
            return miss(n + 1, false, false);
        }
    }
    miss(params.max_steps, true, false)
}
