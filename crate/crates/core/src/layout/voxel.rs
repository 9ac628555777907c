//! Dense bit-packed occupancy grids.

use crate::error::{Error, Result};

/// Placement of a voxel lattice in world space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    /// World position of the minimum corner of voxel `(0, 0, 0)`.
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [u32; 3],
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::invalid("voxel size must be positive"));
        }
        if self.dims.contains(&0) {
            return Err(Error::invalid("grid dims must be positive"));
        }
        if self.origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(())
    }

    /// Grid over a 2D extent whose bottom layer lies just below `z = 0`
    /// and which reaches `height` meters above it.
    pub fn covering(extent: [f64; 4], voxel_size: f64, height: f64) -> Result<Self> {
        if !(voxel_size > 0.0) {
            return Err(Error::invalid("voxel size must be positive"));
        }
        let n = |len: f64| ((len / voxel_size) - 1e-9).ceil().max(1.0) as u32;
        let spec = Self {
            origin: [extent[0], extent[1], -voxel_size],
            voxel_size,
            dims: [n(extent[2] - extent[0]), n(extent[3] - extent[1]), 1 + n(height)],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn len(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// World position of a voxel center.
    pub fn center(&self, x: u32, y: u32, z: u32) -> [f64; 3] {
        let v = self.voxel_size;
        [
            self.origin[0] + (x as f64 + 0.5) * v,
            self.origin[1] + (y as f64 + 0.5) * v,
            self.origin[2] + (z as f64 + 0.5) * v,
        ]
    }

    /// Sub-grid starting at voxel `start` with the given dims.
    pub fn sub(&self, start: [u32; 3], dims: [u32; 3]) -> Self {
        let v = self.voxel_size;
        Self {
            origin: [
                self.origin[0] + start[0] as f64 * v,
                self.origin[1] + start[1] as f64 * v,
                self.origin[2] + start[2] as f64 * v,
            ],
            voxel_size: v,
            dims,
        }
    }
}

/// Occupancy bits, `x` fastest then `y` then `z`, least significant bit first.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [u32; 3],
    bits: Vec<u8>,
}

impl VoxelGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            origin: spec.origin,
            voxel_size: spec.voxel_size,
            dims: spec.dims,
            bits: vec![0; spec.len().div_ceil(8)],
        })
    }

    /// Wraps packed bits; unused trailing bits must be zero.
    pub fn from_bits(spec: GridSpec, bits: Vec<u8>) -> Result<Self> {
        spec.validate()?;
        let n = spec.len();
        if bits.len() != n.div_ceil(8) {
            return Err(Error::invalid(format!(
                "{} occupancy bytes for {n} voxels",
                bits.len()
            )));
        }
        if n % 8 != 0 && bits[n / 8] >> (n % 8) != 0 {
            return Err(Error::invalid("occupancy has bits set past the last voxel"));
        }
        Ok(Self {
            origin: spec.origin,
            voxel_size: spec.voxel_size,
            dims: spec.dims,
            bits,
        })
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            origin: self.origin,
            voxel_size: self.voxel_size,
            dims: self.dims,
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.spec().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32, z: u32) -> usize {
        let [dx, dy, _] = self.dims;
        (z as usize * dy as usize + y as usize) * dx as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, z: u32) -> bool {
        self.get_index(self.index(x, y, z))
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> bool {
        self.bits[i / 8] >> (i % 8) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, z: u32, value: bool) {
        let i = self.index(x, y, z);
        self.set_index(i, value);
    }

    #[inline]
    pub fn set_index(&mut self, i: usize, value: bool) {
        if value {
            self.bits[i / 8] |= 1 << (i % 8);
        } else {
            self.bits[i / 8] &= !(1 << (i % 8));
        }
    }

    /// Bounds-tolerant read: voxels outside the grid are empty.
    pub fn get_signed(&self, x: i64, y: i64, z: i64) -> bool {
        let [dx, dy, dz] = self.dims.map(|d| d as i64);
        x >= 0 && y >= 0 && z >= 0 && x < dx && y < dy && z < dz && self.get(x as u32, y as u32, z as u32)
    }

    pub fn count_occupied(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn center(&self, x: u32, y: u32, z: u32) -> [f64; 3] {
        self.spec().center(x, y, z)
    }

    /// Copies the block starting at `start` with the given dims.
    pub fn extract(&self, start: [u32; 3], dims: [u32; 3]) -> Result<Self> {
        for a in 0..3 {
            if start[a] + dims[a] > self.dims[a] {
                return Err(Error::invalid("sub-block exceeds the grid"));
            }
        }
        let mut out = Self::new(self.spec().sub(start, dims))?;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    if self.get(start[0] + x, start[1] + y, start[2] + z) {
                        out.set(x, y, z, true);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_order_is_x_fastest_lsb_first() {
        let spec = GridSpec {
            origin: [0.0; 3],
            voxel_size: 1.0,
            dims: [3, 2, 2],
        };
        let mut g = VoxelGrid::new(spec).unwrap();
        g.set(1, 0, 0, true);
        g.set(0, 1, 0, true);
        g.set(0, 0, 1, true);
        assert_eq!(g.bits(), &[0b0100_1010, 0b0000]);
        assert_eq!(g.count_occupied(), 3);
        g.set(1, 0, 0, false);
        assert!(!g.get(1, 0, 0));
        assert!(VoxelGrid::from_bits(spec, vec![0, 0b1_0000]).is_err());
    }

    #[test]
    fn covering_spec_places_ground_below_zero() {
        let s = GridSpec::covering([0.0, 0.0, 100.0, 50.0], 0.5, 20.0).unwrap();
        assert_eq!(s.dims, [200, 100, 41]);
        assert_eq!(s.center(0, 0, 0)[2], -0.25);
    }
}
