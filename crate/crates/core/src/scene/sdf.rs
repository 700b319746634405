use serde::{Deserialize, Serialize};

use crate::grid::{self, GridError, GridSpec};
use crate::{Aabb, Vec3};

/// A queryable signed distance function, negative inside.
pub trait SdfField: Send + Sync {
    fn eval(&self, p: &Vec3) -> f64;

    /// Spatial gradient. The default is a central difference with step `h`.
    fn gradient(&self, p: &Vec3, h: f64) -> Vec3 {
        central_difference(|q| self.eval(q), p, h)
    }

    /// True when `|f(p)|` never exceeds the distance to the zero set, which
    /// makes over-relaxed sphere tracing safe.
    fn is_distance_bound(&self) -> bool {
        false
    }

    /// Natural finite-difference step for normals, if the field has one.
    fn natural_step(&self) -> f64 {
        1e-5
    }
}

pub fn central_difference(f: impl Fn(&Vec3) -> f64, p: &Vec3, h: f64) -> Vec3 {
    let mut g = Vec3::zeros();
    for a in 0..3 {
        let mut e = Vec3::zeros();
        e[a] = h;
        g[a] = (f(&(p + e)) - f(&(p - e))) / (2.0 * h);
    }
    g
}

/// Primitive tree evaluated in closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalyticSdf {
    Sphere { center: Vec3, radius: f64 },
    Box { center: Vec3, half_extents: Vec3 },
    /// Torus around the z axis through `center`.
    Torus { center: Vec3, major_radius: f64, minor_radius: f64 },
    Union { children: Vec<AnalyticSdf> },
    Intersection { children: Vec<AnalyticSdf> },
    Difference { base: Box<AnalyticSdf>, subtract: Box<AnalyticSdf> },
    SmoothUnion { a: Box<AnalyticSdf>, b: Box<AnalyticSdf>, k: f64 },
}

impl AnalyticSdf {
    pub fn sphere(center: Vec3, radius: f64) -> Self {
        Self::Sphere { center, radius }
    }

    pub fn unit_sphere() -> Self {
        Self::sphere(Vec3::zeros(), 1.0)
    }

    /// Checks parameter ranges of every node.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Self::Sphere { radius, .. } if !(*radius > 0.0) => Err("sphere radius must be > 0".into()),
            Self::Box { half_extents, .. } if half_extents.iter().any(|h| !(*h > 0.0)) => {
                Err("box half extents must be > 0".into())
            }
            Self::Torus { major_radius, minor_radius, .. } if !(*major_radius > 0.0 && *minor_radius > 0.0) => {
                Err("torus radii must be > 0".into())
            }
            Self::Union { children } | Self::Intersection { children } => {
                if children.is_empty() {
                    return Err("combination node needs at least one child".into());
                }
                children.iter().try_for_each(|c| c.validate())
            }
            Self::Difference { base, subtract } => {
                base.validate()?;
                subtract.validate()
            }
            Self::SmoothUnion { a, b, k } => {
                if !(*k > 0.0) {
                    return Err("smooth union blend k must be > 0".into());
                }
                a.validate()?;
                b.validate()
            }
            _ => Ok(()),
        }
    }

    /// Value and exact gradient (one-sided where the field has a kink).
    pub fn eval_grad(&self, p: &Vec3) -> (f64, Vec3) {
        match self {
            Self::Sphere { center, radius } => {
                let d = p - center;
                let r = d.norm();
                let g = if r > 0.0 { d / r } else { Vec3::zeros() };
                (r - radius, g)
            }
            Self::Box { center, half_extents } => {
                let d = p - center;
                let q = d.abs() - half_extents;
                let qp = q.map(|v| v.max(0.0));
                let outside = qp.norm();
                let sign = d.map(|v| if v < 0.0 { -1.0 } else { 1.0 });
                if outside > 0.0 {
                    (outside, sign.component_mul(&qp) / outside)
                } else {
                    let a = q.imax();
                    let mut g = Vec3::zeros();
                    g[a] = sign[a];
                    (q[a], g)
                }
            }
            Self::Torus { center, major_radius, minor_radius } => {
                let d = p - center;
                let rho = (d.x * d.x + d.y * d.y).sqrt();
                let qx = rho - major_radius;
                let qn = (qx * qx + d.z * d.z).sqrt();
                let f = qn - minor_radius;
                if qn == 0.0 || rho == 0.0 {
                    return (f, Vec3::zeros());
                }
                let g = Vec3::new(qx / qn * d.x / rho, qx / qn * d.y / rho, d.z / qn);
                (f, g)
            }
            Self::Union { children } => children
                .iter()
                .map(|c| c.eval_grad(p))
                .fold((f64::INFINITY, Vec3::zeros()), |acc, v| if v.0 < acc.0 { v } else { acc }),
            Self::Intersection { children } => children
                .iter()
                .map(|c| c.eval_grad(p))
                .fold((f64::NEG_INFINITY, Vec3::zeros()), |acc, v| if v.0 > acc.0 { v } else { acc }),
            Self::Difference { base, subtract } => {
                let a = base.eval_grad(p);
                let (bf, bg) = subtract.eval_grad(p);
                if -bf > a.0 {
                    (-bf, -bg)
                } else {
                    a
                }
            }
            Self::SmoothUnion { a, b, k } => {
                let (fa, ga) = a.eval_grad(p);
                let (fb, gb) = b.eval_grad(p);
                let h = (0.5 + 0.5 * (fb - fa) / k).clamp(0.0, 1.0);
                let f = fb * (1.0 - h) + fa * h - k * h * (1.0 - h);
                if h <= 0.0 || h >= 1.0 {
                    return (f, if h >= 1.0 { ga } else { gb });
                }
                let df_dh = fa - fb - k * (1.0 - 2.0 * h);
                let df_da = h - df_dh * 0.5 / k;
                let df_db = (1.0 - h) + df_dh * 0.5 / k;
                (f, ga * df_da + gb * df_db)
            }
        }
    }
}

impl SdfField for AnalyticSdf {
    fn eval(&self, p: &Vec3) -> f64 {
        match self {
            Self::Sphere { center, radius } => (p - center).norm() - radius,
            Self::Union { children } => children.iter().map(|c| c.eval(p)).fold(f64::INFINITY, f64::min),
            Self::Intersection { children } => children.iter().map(|c| c.eval(p)).fold(f64::NEG_INFINITY, f64::max),
            Self::Difference { base, subtract } => base.eval(p).max(-subtract.eval(p)),
            _ => self.eval_grad(p).0,
        }
    }

    fn gradient(&self, p: &Vec3, _h: f64) -> Vec3 {
        self.eval_grad(p).1
    }

    fn is_distance_bound(&self) -> bool {
        true
    }
}

/// Signed distance samples on a regular grid, trilinearly interpolated.
///
/// Outside the box the field returns the clamped boundary value plus the
/// Euclidean distance to the clamp point, so tracing from outside converges.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelSdf {
    pub spec: GridSpec,
    pub values: Vec<f32>,
}

impl VoxelSdf {
    /// The box is rounded to `f32` so the grid survives a file round trip bit-exactly.
    pub fn new(dims: [usize; 3], bbox: Aabb, values: Vec<f32>) -> Result<Self, GridError> {
        let bbox = Aabb::new(bbox.min.map(|v| v as f32 as f64), bbox.max.map(|v| v as f32 as f64));
        let spec = GridSpec::new(dims, bbox)?;
        if values.len() != spec.len() {
            return Err(GridError::ValueCount { expected: spec.len(), got: values.len() });
        }
        Ok(Self { spec, values })
    }

    /// Samples `field` at every node.
    pub fn sample(field: &dyn SdfField, dims: [usize; 3], bbox: Aabb) -> Result<Self, GridError> {
        let mut g = Self::new(dims, bbox, vec![0.0; dims.iter().product()])?;
        let spec = g.spec;
        use rayon::prelude::*;
        g.values.par_iter_mut().enumerate().for_each(|(idx, v)| {
            let [i, j, k] = spec.coords(idx);
            *v = field.eval(&spec.node_position(i, j, k)) as f32;
        });
        Ok(g)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), GridError> {
        grid::write_grid_file(path, b"SDFG", &self.spec, &self.values)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, GridError> {
        let (spec, values) = grid::read_grid_file(path, b"SDFG")?;
        Ok(Self { spec, values })
    }

    pub fn voxel_size(&self) -> f64 {
        self.spec.min_spacing()
    }
}

impl SdfField for VoxelSdf {
    fn eval(&self, p: &Vec3) -> f64 {
        if self.spec.bbox.contains(p) {
            grid::trilinear(&self.spec, &self.values, p)
        } else {
            let q = self.spec.bbox.clamp(p);
            grid::trilinear(&self.spec, &self.values, &q) + (p - q).norm()
        }
    }

    fn natural_step(&self) -> f64 {
        0.5 * self.voxel_size()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn sphere_is_exact_distance() {
        let s = AnalyticSdf::unit_sphere();
        assert!((s.eval(&Vec3::new(1.5, 0.0, 0.0)) - 0.5).abs() < 1e-15);
        assert!((s.eval(&Vec3::zeros()) + 1.0).abs() < 1e-15);
        assert_eq!(s.gradient(&Vec3::new(2.0, 0.0, 0.0), 1e-3), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(s.gradient(&Vec3::zeros(), 1e-3), Vec3::zeros());
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let tree = AnalyticSdf::Union {
            children: vec![
                AnalyticSdf::SmoothUnion {
                    a: Box::new(AnalyticSdf::unit_sphere()),
                    b: Box::new(AnalyticSdf::sphere(Vec3::new(0.9, 0.0, 0.3), 0.4)),
                    k: 0.2,
                },
                AnalyticSdf::Box { center: Vec3::new(0.0, 2.0, 0.0), half_extents: Vec3::new(0.3, 0.2, 0.4) },
                AnalyticSdf::Torus { center: Vec3::new(-2.0, 0.0, 0.0), major_radius: 0.6, minor_radius: 0.2 },
            ],
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let (f, g) = tree.eval_grad(&p);
            assert!((f - tree.eval(&p)).abs() < 1e-12);
            let fd = central_difference(|q| tree.eval(q), &p, 1e-6);
            // kinks of min/max and of the box are measure-zero; skip when the
            // finite difference straddles one
            if (fd.norm() - 1.0).abs() < 0.5 && (g - fd).norm() > 1e-4 {
                let fd2 = central_difference(|q| tree.eval(q), &p, 1e-8);
                assert!((g - fd2).norm() < 1e-3 || (fd - fd2).norm() > 1e-4, "p={p:?} g={g:?} fd={fd:?}");
            }
        }
    }

    #[test]
    fn voxel_outside_box_adds_offset() {
        let s = AnalyticSdf::unit_sphere();
        let g = VoxelSdf::sample(&s, [33, 33, 33], Aabb::cube(Vec3::zeros(), 1.5)).unwrap();
        let p = Vec3::new(4.0, 0.0, 0.0);
        let edge = g.eval(&Vec3::new(1.5, 0.0, 0.0));
        assert!((g.eval(&p) - (edge + 2.5)).abs() < 1e-12);
        // never below the true distance outside the box
        assert!(g.eval(&p) >= s.eval(&p) - 1e-6);
    }

    #[test]
    fn voxel_sdf_validation() {
        assert!(VoxelSdf::new([2, 2, 2], Aabb::cube(Vec3::zeros(), 1.0), vec![0.0; 7]).is_err());
        assert!(VoxelSdf::new([2, 1, 2], Aabb::cube(Vec3::zeros(), 1.0), vec![0.0; 4]).is_err());
    }

    #[test]
    fn scene_json_shape() {
        let s = AnalyticSdf::SmoothUnion {
            a: Box::new(AnalyticSdf::unit_sphere()),
            b: Box::new(AnalyticSdf::sphere(Vec3::new(1.0, 0.0, 0.0), 0.3)),
            k: 0.1,
        };
        let js = serde_json::to_string(&s).unwrap();
        assert!(js.contains("\"type\":\"smooth_union\""));
        let back: AnalyticSdf = serde_json::from_str(&js).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<AnalyticSdf>(r#"{"type":"sphere","center":[0,0,0],"radius":1,"bogus":2}"#).is_err());
        assert!(AnalyticSdf::sphere(Vec3::zeros(), -1.0).validate().is_err());
    }
}
