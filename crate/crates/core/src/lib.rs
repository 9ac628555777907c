//! Geometry-grounded scene generation with planar Gaussian splats.
//!
//! The crate covers the whole offline pipeline: a coarse voxel layout is
//! generated from a road map and meshed ([`layout`]); the proxy mesh seeds a
//! splat scene ([`scene`]); the scene is rendered by a differentiable
//! software rasterizer ([`raster`]) and optimized against a denoising prior
//! through DDIM inversion ([`diffusion`], [`ggds`]); results are persisted
//! and measured by [`io`].
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`). The aliases at
//! the crate root name the `f32` engine types.

pub mod bench;
pub mod diffusion;
pub mod error;
pub mod ggds;
pub mod image;
pub mod io;
pub mod layout;
pub mod math;
pub mod raster;
pub mod real;
pub mod scene;

pub use error::{Error, Result};
pub use real::Real;

pub type Vec3f = math::Vec3<f32>;
pub type Splat32 = scene::Splat<f32>;
pub type Scene32 = scene::SceneModel<f32>;
pub type Camera32 = raster::Camera<f32>;
pub type Buffers32 = raster::RenderBuffers<f32>;
pub type Mesh32 = scene::TriangleMesh<f32>;
pub type Image32 = image::Image<f32>;
