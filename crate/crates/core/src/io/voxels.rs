//! Occupancy grids as `LSDV` files: magic | version u8 | origin 3×f64 |
//! voxel size f64 | dims 3×u32 | packed occupancy bits, all little-endian.

use std::path::Path;

use crate::error::Result;
use crate::io::{parse_err, read_file, write_file, Bytes, LoadError};
use crate::layout::{GridSpec, VoxelGrid};

pub const VOXEL_MAGIC: [u8; 4] = *b"LSDV";
pub const VOXEL_VERSION: u8 = 1;

pub fn write_voxels(grid: &VoxelGrid) -> Vec<u8> {
    let mut buf = Vec::with_capacity(4 + 1 + 32 + 12 + grid.bits().len());
    buf.extend_from_slice(&VOXEL_MAGIC);
    buf.push(VOXEL_VERSION);
    for o in grid.origin {
        buf.extend_from_slice(&o.to_le_bytes());
    }
    buf.extend_from_slice(&grid.voxel_size.to_le_bytes());
    for d in grid.dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.extend_from_slice(grid.bits());
    buf
}

pub fn read_voxels(bytes: &[u8]) -> Result<VoxelGrid, LoadError> {
    let mut r = Bytes::new(bytes);
    let magic = r.take(4.min(bytes.len()), "magic")?;
    if magic != VOXEL_MAGIC {
        return Err(LoadError::BadMagic {
            path: super::stream_path(),
            expected: "LSDV".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = r.u8("version")?;
    if version != VOXEL_VERSION {
        return Err(LoadError::UnsupportedVersion {
            path: super::stream_path(),
            found: version.to_string(),
        });
    }
    let origin = [r.f64("origin")?, r.f64("origin")?, r.f64("origin")?];
    let voxel_size = r.f64("voxel size")?;
    let dims = [r.u32("dims")?, r.u32("dims")?, r.u32("dims")?];
    let spec = GridSpec {
        origin,
        voxel_size,
        dims,
    };
    let n = dims.iter().map(|&d| d as usize).product::<usize>().div_ceil(8);
    let bits = r.take(n, "occupancy")?.to_vec();
    if r.remaining() != 0 {
        return Err(parse_err(format!("{} bytes after the occupancy bits", r.remaining())));
    }
    VoxelGrid::from_bits(spec, bits).map_err(|e| parse_err(e.to_string()))
}

pub fn save_voxels(path: &Path, grid: &VoxelGrid) -> Result<()> {
    write_file(path, &write_voxels(grid))
}

pub fn load_voxels(path: &Path) -> Result<VoxelGrid, LoadError> {
    read_voxels(&read_file(path)?).map_err(|e| e.at(path))
}
