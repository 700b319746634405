use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use super::{CameraView, VoxelSdf};
use crate::grid::{GridError, GridSpec};
use crate::Aabb;

#[derive(Debug, Error)]
pub enum TsdfError {
    #[error("need at least one view with depth")]
    NoViews,
    #[error("truncation must be > 0, got {0}")]
    Truncation(f64),
    #[error("depth noise sigma must be >= 0, got {0}")]
    Noise(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Depth maps with seeded Gaussian noise added to every hit pixel.
pub fn noisy_depths(views: &[&CameraView], sigma: f64, seed: u64) -> Vec<Vec<f32>> {
    views
        .iter()
        .map(|v| {
            let depth = v.depth.as_ref().expect("view without depth");
            if sigma == 0.0 {
                return depth.clone();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(v.id as u64));
            let normal = Normal::new(0.0, sigma).unwrap();
            depth
                .iter()
                .map(|&d| if d > 0.0 { (d as f64 + normal.sample(&mut rng)).max(1e-6) as f32 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Truncated signed distance fusion with uniform weights.
///
/// Per view, a node projecting into the image gets `clamp(depth - dist, ±τ)`
/// where `depth` is the nearest pixel's ray distance and `dist` the node's
/// distance to the camera center. Pixels that missed the object count as
/// free space (`+τ`). Nodes lying more than `τ` behind the observed surface
/// carry no value in that view. A node that every view reports as behind is
/// interior (`-τ`), but only when it lies inside every view's frustum: space
/// some camera cannot see at all is treated as free, which keeps the occlusion
/// shadows of sparse rigs from turning into phantom geometry. Nodes no view
/// observes stay `+τ`.
pub fn tsdf_fuse(views: &[&CameraView], dims: [usize; 3], bbox: Aabb, truncation: f64, sigma: f64, seed: u64) -> Result<VoxelSdf, TsdfError> {
    if views.is_empty() || views.iter().any(|v| v.depth.is_none()) {
        return Err(TsdfError::NoViews);
    }
    if !(truncation > 0.0) {
        return Err(TsdfError::Truncation(truncation));
    }
    if !(sigma >= 0.0) {
        return Err(TsdfError::Noise(sigma));
    }
    let spec = GridSpec::new(dims, bbox)?;
    let depths = noisy_depths(views, sigma, seed);
    let mut out = VoxelSdf::new(dims, bbox, vec![0.0; spec.len()])?;
    let spec = out.spec;
    out.values.par_iter_mut().enumerate().for_each(|(idx, value)| {
        let [i, j, k] = spec.coords(idx);
        let p = spec.node_position(i, j, k);
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut behind = 0usize;
        let mut outside = false;
        for (view, depth) in views.iter().zip(&depths) {
            let Some((px, _)) = view.project(&p) else {
                outside = true;
                continue;
            };
            let (x, y) = (px.x.round(), px.y.round());
            if x < 0.0 || y < 0.0 || x > (view.width - 1) as f64 || y > (view.height - 1) as f64 {
                outside = true;
                continue;
            }
            let d = depth[y as usize * view.width + x as usize] as f64;
            if d <= 0.0 {
                sum += truncation;
                count += 1;
                continue;
            }
            let sdf = d - (p - view.center()).norm();
            if sdf < -truncation {
                behind += 1;
            } else {
                sum += sdf.min(truncation);
                count += 1;
            }
        }
        *value = if count > 0 {
            (sum / count as f64) as f32
        } else if behind > 0 && !outside {
            -truncation as f32
        } else {
            truncation as f32
        };
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{render_view, AnalyticSdf, Intrinsics, SdfField, ShadingModel};
    use crate::{BoundingSphere, Vec3};

    #[test]
    fn frontal_plane_zero_crossing() {
        // slab whose front face is the plane z = 1
        let slab = AnalyticSdf::Box { center: Vec3::new(0.0, 0.0, 3.0), half_extents: Vec3::new(20.0, 20.0, 2.0) };
        let cam = CameraView::look_at(0, Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0), Vec3::y(), Intrinsics::from_fov(41, 41, 60.0), 41, 41);
        let bounds = BoundingSphere { center: Vec3::new(0.0, 0.0, 1.0), radius: 3.0 };
        let view = render_view(&slab, &ShadingModel::lambertian_noise(0, 1.0), &cam, &bounds);
        let bbox = Aabb::new(Vec3::new(-0.2, -0.2, 0.5), Vec3::new(0.2, 0.2, 1.5));
        let grid = tsdf_fuse(&[&view], [5, 5, 41], bbox, 0.1, 0.0, 0).unwrap();
        let spacing = grid.spec.spacing().z;
        // walk the central column and locate the sign change
        let mut crossing = None;
        for k in 0..40 {
            let a = grid.values[grid.spec.index(2, 2, k)] as f64;
            let b = grid.values[grid.spec.index(2, 2, k + 1)] as f64;
            if a > 0.0 && b <= 0.0 {
                let za = grid.spec.node_position(2, 2, k).z;
                crossing = Some(za + spacing * a / (a - b));
                break;
            }
        }
        let z = crossing.expect("no zero crossing");
        assert!((z - 1.0).abs() < spacing, "z={z}");
    }

    #[test]
    fn unobserved_nodes_keep_truncation() {
        let cam = CameraView::look_at(0, Vec3::new(0.0, 0.0, 3.0), Vec3::zeros(), Vec3::y(), Intrinsics::from_fov(16, 16, 20.0), 16, 16);
        let view = render_view(&AnalyticSdf::unit_sphere(), &ShadingModel::lambertian_noise(0, 1.0), &cam, &BoundingSphere { center: Vec3::zeros(), radius: 1.5 });
        let grid = tsdf_fuse(&[&view], [9, 9, 9], Aabb::new(Vec3::new(5.0, 5.0, 5.0), Vec3::new(6.0, 6.0, 6.0)), 0.2, 0.0, 0).unwrap();
        assert!(grid.values.iter().all(|&v| v == 0.2f32));
        // and the field is evaluable away from the box
        assert!(grid.eval(&Vec3::zeros()) > 0.0);
    }

    #[test]
    fn validation() {
        assert!(matches!(tsdf_fuse(&[], [4, 4, 4], Aabb::cube(Vec3::zeros(), 1.0), 0.1, 0.0, 0), Err(TsdfError::NoViews)));
        let mut cam = CameraView::look_at(0, Vec3::new(0.0, 0.0, 3.0), Vec3::zeros(), Vec3::y(), Intrinsics::from_fov(4, 4, 20.0), 4, 4);
        cam.depth = Some(vec![0.0; 16]);
        assert!(matches!(tsdf_fuse(&[&cam], [4, 4, 4], Aabb::cube(Vec3::zeros(), 1.0), 0.0, 0.0, 0), Err(TsdfError::Truncation(_))));
        assert!(matches!(tsdf_fuse(&[&cam], [1, 4, 4], Aabb::cube(Vec3::zeros(), 1.0), 0.1, 0.0, 0), Err(TsdfError::Grid(_))));
    }
}
