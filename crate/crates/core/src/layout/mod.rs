//! Coarse scene layout: map-conditioned voxel occupancy, chunked
//! outpainting and surface extraction to the proxy mesh.

mod chunked;
mod extrude;
mod map;
mod surface;
mod voxel;

pub use chunked::{
    generate_chunked, ChunkConstraint, ChunkGenerator, ChunkOptions, ChunkRecord, ChunkedLayout,
    DiffusionChunkSampler, Extruder,
};
pub use extrude::{extrude_layout, ExtrudeOptions, Extrusion};
pub use map::{is_simple_polygon, point_in_polygon, segment_distance2, Building, MapLayout, Road};
pub use surface::extract_surface;
pub use voxel::{GridSpec, VoxelGrid};

/// Default iso level for [`extract_surface`].
pub const DEFAULT_ISO: f64 = 0.5;
