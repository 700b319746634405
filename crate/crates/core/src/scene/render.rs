use rayon::prelude::*;

use super::{SdfField, ShadingModel};
use crate::raster::RgbImage;
use crate::scene::CameraView;
use crate::surface::{sphere_trace, Ray, SurfacePoint, TraceParams};
use crate::BoundingSphere;

/// Tracing settings used when producing reference images and depth.
pub const RENDER_TRACE: TraceParams = TraceParams { epsilon: 1e-5, max_steps: 512, omega: 1.0 };

/// Sphere-traces the ray through pixel `(x, y)` inside the bounding sphere.
pub fn trace_pixel(field: &dyn SdfField, cam: &CameraView, bounds: &BoundingSphere, x: usize, y: usize, params: &TraceParams) -> Option<SurfacePoint> {
    let (o, d) = cam.pixel_ray(x as f64, y as f64);
    let (t0, t1) = bounds.ray_interval(&o, &d)?;
    let ray = Ray::new(o, d, t0, t1).ok()?;
    let mut hit = sphere_trace(field, &ray, params).hit?;
    hit.view_id = Some(cam.id);
    Some(hit)
}

/// Renders image and ray-distance depth for `cam`. Deterministic; misses get
/// the background color and depth 0.
pub fn render_view(field: &dyn SdfField, shading: &ShadingModel, cam: &CameraView, bounds: &BoundingSphere) -> CameraView {
    let (w, h) = (cam.width, cam.height);
    let rows: Vec<(Vec<[f32; 3]>, Vec<f32>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut colors = Vec::with_capacity(w);
            let mut depths = Vec::with_capacity(w);
            for x in 0..w {
                match trace_pixel(field, cam, bounds, x, y, &RENDER_TRACE) {
                    Some(hit) => {
                        let c = shading.shade(&hit.position, &hit.normal, &(-hit.ray_dir));
                        colors.push([c[0] as f32, c[1] as f32, c[2] as f32]);
                        depths.push(hit.t as f32);
                    }
                    None => {
                        let b = shading.background;
                        colors.push([b[0] as f32, b[1] as f32, b[2] as f32]);
                        depths.push(0.0);
                    }
                }
            }
            (colors, depths)
        })
        .collect();
    let mut image = RgbImage::new(w, h, [0.0; 3]);
    let mut depth = vec![0.0f32; w * h];
    for (y, (c, d)) in rows.into_iter().enumerate() {
        image.data[y * w..(y + 1) * w].copy_from_slice(&c);
        depth[y * w..(y + 1) * w].copy_from_slice(&d);
    }
    let mut out = cam.clone();
    out.image = Some(image);
    out.depth = Some(depth);
    out
}
