use super::{AnalyticSdf, SdfField, VoxelSdf};
use crate::grid::GridError;
use crate::{Aabb, Vec3};

/// Zero-crossing points on every grid edge whose endpoint values change
/// sign, linearly interpolated. Ordered by node index then axis.
pub fn grid_surface_points(grid: &VoxelSdf) -> Vec<Vec3> {
    let spec = &grid.spec;
    let [nx, ny, nz] = spec.dims;
    let mut out = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let a = grid.values[spec.index(i, j, k)] as f64;
                let pa = spec.node_position(i, j, k);
                let neighbors = [
                    (i + 1 < nx).then(|| (i + 1, j, k)),
                    (j + 1 < ny).then(|| (i, j + 1, k)),
                    (k + 1 < nz).then(|| (i, j, k + 1)),
                ];
                for (ni, nj, nk) in neighbors.into_iter().flatten() {
                    let b = grid.values[spec.index(ni, nj, nk)] as f64;
                    if (a > 0.0) != (b > 0.0) {
                        let pb = spec.node_position(ni, nj, nk);
                        let s = a / (a - b);
                        out.push(pa + (pb - pa) * s);
                    }
                }
            }
        }
    }
    out
}

/// Dense point samples on an analytic surface: grid edge crossings refined
/// onto the zero set with two Newton projections.
pub fn analytic_surface_points(sdf: &AnalyticSdf, dims: [usize; 3], bbox: Aabb) -> Result<Vec<Vec3>, GridError> {
    let grid = VoxelSdf::sample(sdf, dims, bbox)?;
    let mut pts = grid_surface_points(&grid);
    for p in pts.iter_mut() {
        for _ in 0..2 {
            let (f, g) = sdf.eval_grad(p);
            let gn = g.norm_squared();
            if gn > 1e-12 {
                *p -= g * (f / gn);
            }
        }
    }
    pts.retain(|p| sdf.eval(p).abs() < 1e-6);
    Ok(pts)
}
