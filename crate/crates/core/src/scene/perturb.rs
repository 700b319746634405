use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::shading::plane_waves;
use super::{SdfField, VoxelSdf};
use crate::grid::GridError;
use crate::{Aabb, Vec3};

/// A ball of injected reconstruction error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbRegion {
    pub center: Vec3,
    pub radius: f64,
    pub amplitude: f64,
    pub seed: u64,
    /// Noise wavelengths per region radius.
    #[serde(default = "default_cycles")]
    pub cycles: f64,
}

fn default_cycles() -> f64 {
    1.5
}

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("region radius must be > 0, got {0}")]
    Radius(f64),
    #[error("region amplitude must be >= 0, got {0}")]
    Amplitude(f64),
    #[error("region noise cycles must be finite and >= 0, got {0}")]
    Cycles(f64),
    #[error("region centered at {0:?} lies outside the grid box")]
    OutsideBox(Vec3),
    #[error(transparent)]
    Grid(#[from] GridError),
}

const WAVES: usize = 3;

impl PerturbRegion {
    /// Cosine falloff from 1 at the center to 0 at the boundary.
    pub fn falloff(&self, p: &Vec3) -> f64 {
        let r = (p - self.center).norm();
        if r >= self.radius {
            0.0
        } else {
            0.5 * (1.0 + (std::f64::consts::PI * r / self.radius).cos())
        }
    }

    /// Band-limited noise in `[-1, 1]`.
    pub fn noise(&self, p: &Vec3) -> f64 {
        let w = std::f64::consts::TAU * self.cycles / self.radius;
        let q = p - self.center;
        plane_waves(self.seed, WAVES).iter().map(|(d, ph)| (w * d.dot(&q) + ph).sin()).sum::<f64>() / WAVES as f64
    }

    /// Offset added to the signed distance at `p`.
    pub fn offset(&self, p: &Vec3) -> f64 {
        let f = self.falloff(p);
        if f == 0.0 {
            0.0
        } else {
            self.amplitude * f * self.noise(p)
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (p - self.center).norm() < self.radius
    }
}

/// Samples `src` on the grid and adds smooth noise inside every region.
/// Nodes outside all regions keep the sampled value exactly.
pub fn perturb_sdf(src: &dyn SdfField, regions: &[PerturbRegion], dims: [usize; 3], bbox: Aabb) -> Result<VoxelSdf, PerturbError> {
    for r in regions {
        if !(r.radius > 0.0) {
            return Err(PerturbError::Radius(r.radius));
        }
        if !(r.amplitude >= 0.0) {
            return Err(PerturbError::Amplitude(r.amplitude));
        }
        if !(r.cycles >= 0.0 && r.cycles.is_finite()) {
            return Err(PerturbError::Cycles(r.cycles));
        }
        if !bbox.contains(&r.center) {
            return Err(PerturbError::OutsideBox(r.center));
        }
    }
    let mut grid = VoxelSdf::sample(src, dims, bbox)?;
    let spec = grid.spec;
    grid.values.par_iter_mut().enumerate().for_each(|(idx, v)| {
        let [i, j, k] = spec.coords(idx);
        let p = spec.node_position(i, j, k);
        let off: f64 = regions.iter().map(|r| r.offset(&p)).sum();
        if off != 0.0 {
            *v = (*v as f64 + off) as f32;
        }
    });
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::AnalyticSdf;

    fn bbox() -> Aabb {
        Aabb::cube(Vec3::zeros(), 1.5)
    }

    #[test]
    fn no_regions_is_plain_sampling() {
        let s = AnalyticSdf::unit_sphere();
        let a = perturb_sdf(&s, &[], [17, 17, 17], bbox()).unwrap();
        let b = VoxelSdf::sample(&s, [17, 17, 17], bbox()).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn amplitude_bounds_the_change() {
        let s = AnalyticSdf::unit_sphere();
        let region = PerturbRegion { center: Vec3::new(0.0, 0.0, 1.0), radius: 0.5, amplitude: 0.05, seed: 7, cycles: 1.5 };
        let a = perturb_sdf(&s, std::slice::from_ref(&region), [33, 33, 33], bbox()).unwrap();
        let b = VoxelSdf::sample(&s, [33, 33, 33], bbox()).unwrap();
        let mut max = 0.0f64;
        for idx in 0..a.values.len() {
            let d = (a.values[idx] as f64 - b.values[idx] as f64).abs();
            let [i, j, k] = a.spec.coords(idx);
            let p = a.spec.node_position(i, j, k);
            if !region.contains(&p) {
                assert_eq!(d, 0.0);
            }
            max = max.max(d);
        }
        assert!(max > 0.0 && max <= 0.05 + 1e-6, "max={max}");
    }

    #[test]
    fn rejects_bad_regions() {
        let s = AnalyticSdf::unit_sphere();
        let bad = |radius, amplitude| PerturbRegion { center: Vec3::zeros(), radius, amplitude, seed: 0, cycles: 1.5 };
        assert!(matches!(perturb_sdf(&s, &[bad(0.0, 0.1)], [4, 4, 4], bbox()), Err(PerturbError::Radius(_))));
        assert!(matches!(perturb_sdf(&s, &[bad(0.3, -0.1)], [4, 4, 4], bbox()), Err(PerturbError::Amplitude(_))));
    }
}
