//! Mesh loading, cameras, rasterization, and texture scatter/gather.

pub mod camera;
pub mod math;
pub mod mesh;
pub mod primitives;
pub mod raster;
pub mod texture;

pub use camera::{alternating_order, sample_views, CameraPose, Intrinsics};
pub use mesh::{load_mesh, parse_obj, Mesh};
pub use raster::{rasterize, DepthImage, Fragment, RasterMap};
pub use texture::{
    downsample_mask, first_obs_mask, inverse_render, render, validity_mask, GrazingFilter, Mask, Rgb,
    RgbImage, TextureMap,
};
