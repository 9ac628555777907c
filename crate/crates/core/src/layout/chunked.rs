//! Chunk-wise outpainting of large layouts.
//!
//! Chunks are visited in row-major order (`x` fastest). Every voxel already
//! written by an earlier chunk is a hard constraint for later ones, so the
//! overlap slabs are bit-identical by construction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::{Conditioning, Denoiser, DenoiserRequest, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::layout::map::point_in_polygon;
use crate::layout::{extrude_layout, ExtrudeOptions, GridSpec, MapLayout, VoxelGrid};

/// Voxels a chunk must reproduce exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkConstraint {
    pub values: VoxelGrid,
    pub mask: VoxelGrid,
}

impl ChunkConstraint {
    pub fn free(spec: GridSpec) -> Result<Self> {
        Ok(Self {
            values: VoxelGrid::new(spec)?,
            mask: VoxelGrid::new(spec)?,
        })
    }

    pub fn fixed_count(&self) -> usize {
        self.mask.count_occupied()
    }

    pub fn apply(&self, grid: &mut VoxelGrid) {
        for i in 0..grid.len() {
            if self.mask.get_index(i) {
                grid.set_index(i, self.values.get_index(i));
            }
        }
    }
}

/// Produces the occupancy of one chunk given the map and fixed voxels.
pub trait ChunkGenerator {
    fn generate(
        &mut self,
        map: &MapLayout,
        spec: GridSpec,
        constraint: &ChunkConstraint,
        seed: u64,
    ) -> Result<VoxelGrid>;
}

/// [`extrude_layout`] as a chunk generator.
#[derive(Clone, Debug, Default)]
pub struct Extruder {
    pub options: ExtrudeOptions,
}

impl ChunkGenerator for Extruder {
    fn generate(&mut self, map: &MapLayout, spec: GridSpec, _: &ChunkConstraint, seed: u64) -> Result<VoxelGrid> {
        Ok(extrude_layout(map, spec, seed, &self.options)?.grid)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChunkOptions {
    pub voxel_size: f64,
    /// Vertical extent above ground, meters.
    pub height: f64,
    /// Horizontal chunk side, meters.
    pub chunk_extent: f64,
    /// Voxels shared between neighboring chunks.
    pub overlap: u32,
}

impl Default for ChunkOptions {
    fn default() -> Self {
        Self {
            voxel_size: 0.5,
            height: 24.0,
            chunk_extent: 100.0,
            overlap: 8,
        }
    }
}

impl ChunkOptions {
    /// Horizontal chunk dims in voxels.
    pub fn chunk_dims(&self) -> u32 {
        (self.chunk_extent / self.voxel_size).round().max(1.0) as u32
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChunkRecord {
    /// Voxel index of the chunk's minimum corner in the stitched grid.
    pub start: [u32; 3],
    /// The chunk as generated, after applying its constraint.
    pub grid: VoxelGrid,
    pub fixed_voxels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChunkedLayout {
    pub grid: VoxelGrid,
    pub chunks: Vec<ChunkRecord>,
}

/// Start offsets of equally sized windows covering `0..len`.
fn window_starts(len: u32, size: u32, overlap: u32) -> Vec<u32> {
    if size >= len {
        return vec![0];
    }
    let stride = size - overlap;
    let mut starts = vec![0];
    while starts[starts.len() - 1] + size < len {
        let next = (starts[starts.len() - 1] + stride).min(len - size);
        starts.push(next);
    }
    starts
}

fn chunk_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn generate_chunked(
    generator: &mut dyn ChunkGenerator,
    map: &MapLayout,
    opts: &ChunkOptions,
    seed: u64,
) -> Result<ChunkedLayout> {
    map.validate()?;
    if opts.overlap == 0 {
        return Err(Error::invalid("chunk overlap must be positive"));
    }
    let spec = GridSpec::covering(map.extent, opts.voxel_size, opts.height)?;
    let c = opts.chunk_dims();
    let [dx, dy, dz] = spec.dims;
    let multi = c < dx || c < dy;
    if multi && opts.overlap >= c {
        return Err(Error::invalid(format!(
            "overlap of {} voxels must be smaller than the chunk size of {c}",
            opts.overlap
        )));
    }
    let xs = window_starts(dx, c, opts.overlap);
    let ys = window_starts(dy, c, opts.overlap);
    let mut grid = VoxelGrid::new(spec)?;
    let mut written = VoxelGrid::new(spec)?;
    let mut chunks = Vec::new();
    for &y0 in &ys {
        for &x0 in &xs {
            let start = [x0, y0, 0];
            let dims = [c.min(dx), c.min(dy), dz];
            let sub = spec.sub(start, dims);
            let constraint = ChunkConstraint {
                values: grid.extract(start, dims)?,
                mask: written.extract(start, dims)?,
            };
            let mut out = generator.generate(map, sub, &constraint, chunk_seed(seed, chunks.len()))?;
            if out.spec() != sub {
                return Err(Error::invalid("chunk generator returned a grid of the wrong shape"));
            }
            constraint.apply(&mut out);
            for z in 0..dims[2] {
                for y in 0..dims[1] {
                    for x in 0..dims[0] {
                        let (gx, gy) = (x0 + x, y0 + y);
                        grid.set(gx, gy, z, out.get(x, y, z));
                        written.set(gx, gy, z, true);
                    }
                }
            }
            chunks.push(ChunkRecord {
                start,
                grid: out,
                fixed_voxels: constraint.fixed_count(),
            });
        }
    }
    Ok(ChunkedLayout { grid, chunks })
}

/// Chunk generator that samples occupancy logits with a denoiser.
///
/// The latent is `height × width × layers` with occupied = +1 and empty = −1;
/// fixed voxels are re-imposed at every step at the current noise level.
/// Conditioning carries the footprint height raster in meters in the
/// disparity slot.
pub struct DiffusionChunkSampler<D> {
    pub denoiser: D,
    pub schedule: DiffusionSchedule,
    pub steps: usize,
}

impl<D: Denoiser<f32>> DiffusionChunkSampler<D> {
    pub fn new(denoiser: D, schedule: DiffusionSchedule, steps: usize) -> Self {
        Self {
            denoiser,
            schedule,
            steps,
        }
    }
}

fn footprint_raster(map: &MapLayout, spec: GridSpec) -> Image<f32> {
    let [dx, dy, _] = spec.dims;
    let mut img = Image::zeros(dx as usize, dy as usize, 1);
    for y in 0..dy {
        for x in 0..dx {
            let c = spec.center(x, y, 0);
            let h = map
                .buildings
                .iter()
                .filter(|b| point_in_polygon([c[0], c[1]], &b.polygon))
                .map(|b| b.height)
                .fold(0.0, f64::max);
            *img.at_mut(x as usize, y as usize, 0) = h as f32;
        }
    }
    img
}

impl<D: Denoiser<f32>> ChunkGenerator for DiffusionChunkSampler<D> {
    fn generate(
        &mut self,
        map: &MapLayout,
        spec: GridSpec,
        constraint: &ChunkConstraint,
        seed: u64,
    ) -> Result<VoxelGrid> {
        if self.steps == 0 {
            return Err(Error::invalid("sampler needs at least one step"));
        }
        let [dx, dy, dz] = spec.dims;
        let (w, h, c) = (dx as usize, dy as usize, dz as usize);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise = || -> Image<f32> {
            let data = (0..w * h * c).map(|_| StandardNormal.sample(&mut rng)).collect();
            Image::from_vec(w, h, c, data).expect("sized")
        };
        let fixed_eps = noise();
        let mut z = noise();
        let known = |x: usize, y: usize, l: usize| {
            let (x, y, l) = (x as u32, y as u32, l as u32);
            constraint
                .mask
                .get(x, y, l)
                .then(|| if constraint.values.get(x, y, l) { 1.0f32 } else { -1.0 })
        };
        let cond_raster = footprint_raster(map, spec);
        let cond = Conditioning {
            disparity: Some(&cond_raster),
            text: None,
        };
        let levels = DiffusionSchedule::sub_levels(self.schedule.steps(), 0, self.steps);
        let inpaint = |z: &mut Image<f32>, level: usize| {
            let a = self.schedule.alpha_bar(level);
            let (sa, sn) = (a.sqrt() as f32, (1.0 - a).sqrt() as f32);
            for y in 0..h {
                for x in 0..w {
                    for l in 0..c {
                        if let Some(v) = known(x, y, l) {
                            let i = (y * w + x) * c + l;
                            z.data[i] = sa * v + sn * fixed_eps.data[i];
                        }
                    }
                }
            }
        };
        for (step, pair) in levels.windows(2).enumerate() {
            let (from, to) = (pair[0], pair[1]);
            inpaint(&mut z, from);
            let request = DenoiserRequest {
                latent: &z,
                t: from,
                alpha_bar: self.schedule.alpha_bar(from),
                conditioning: cond,
            };
            let eps = self
                .denoiser
                .predict_eps(&request)
                .map_err(|e| Error::from(e).at_step(step))?;
            let (a0, a1) = (self.schedule.alpha_bar(from), self.schedule.alpha_bar(to));
            let k = (a1 / a0).sqrt() as f32;
            let (c0, c1) = ((1.0 - a0).sqrt() as f32, (1.0 - a1).sqrt() as f32);
            for (v, e) in z.data.iter_mut().zip(&eps.data) {
                *v = k * (*v - c0 * e) + c1 * e;
            }
        }
        let mut grid = VoxelGrid::new(spec)?;
        for y in 0..h {
            for x in 0..w {
                for l in 0..c {
                    if z.data[(y * w + x) * c + l] > 0.0 {
                        grid.set(x as u32, y as u32, l as u32, true);
                    }
                }
            }
        }
        constraint.apply(&mut grid);
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::Building;

    fn city(size: f64) -> MapLayout {
        let mut map = MapLayout::empty([0.0, 0.0, size, size]);
        map.buildings.push(Building {
            polygon: vec![[3.0, 3.0], [9.0, 3.0], [9.0, 12.0], [3.0, 12.0]],
            height: 6.0,
        });
        map
    }

    #[test]
    fn windows_cover_the_axis() {
        assert_eq!(window_starts(10, 20, 4), vec![0]);
        assert_eq!(window_starts(36, 20, 4), vec![0, 16]);
        assert_eq!(window_starts(40, 20, 4), vec![0, 16, 20]);
    }

    #[test]
    fn single_chunk_equals_generator_output() {
        let map = city(16.0);
        let opts = ChunkOptions {
            voxel_size: 1.0,
            height: 8.0,
            chunk_extent: 100.0,
            overlap: 8,
        };
        let mut ex = Extruder::default();
        let out = generate_chunked(&mut ex, &map, &opts, 3).unwrap();
        assert_eq!(out.chunks.len(), 1);
        let spec = GridSpec::covering(map.extent, 1.0, 8.0).unwrap();
        let direct = ex
            .generate(&map, spec, &ChunkConstraint::free(spec).unwrap(), chunk_seed(3, 0))
            .unwrap();
        assert_eq!(out.grid, direct);
    }

    #[test]
    fn chunk_dims_follow_extent() {
        let opts = ChunkOptions::default();
        assert_eq!(opts.chunk_dims(), 200);
    }

    #[test]
    fn rejects_bad_overlap() {
        let map = city(40.0);
        let mut opts = ChunkOptions {
            voxel_size: 1.0,
            height: 8.0,
            chunk_extent: 20.0,
            overlap: 0,
        };
        assert!(generate_chunked(&mut Extruder::default(), &map, &opts, 0).is_err());
        opts.overlap = 20;
        assert!(generate_chunked(&mut Extruder::default(), &map, &opts, 0).is_err());
    }
}
