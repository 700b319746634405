//! Synthetic scenes: analytic and voxel SDFs, cameras, shading, rendering,
//! error injection, TSDF fusion and dataset persistence.

mod camera;
mod dataset;
mod perturb;
mod render;
mod sampling;
mod sdf;
mod shading;
mod tsdf;
pub mod presets;

pub use camera::{fibonacci_sphere, ring_rig, CameraView, Intrinsics};
pub use dataset::{load_image_set, save_image_set, CameraRecord, DatasetError, SceneDataset, SceneDescription};
pub use perturb::{perturb_sdf, PerturbError, PerturbRegion};
pub use render::{render_view, trace_pixel, RENDER_TRACE};
pub use sampling::{analytic_surface_points, grid_surface_points};
pub use sdf::{central_difference, AnalyticSdf, SdfField, VoxelSdf};
pub use shading::{reflect, Albedo, Light, Rgb, ShadingModel, Specular};
pub use tsdf::{noisy_depths, tsdf_fuse, TsdfError};
