//! Differentiable software rasterizer for planar 2D-Gaussian splats.
//!
//! Each pixel ray is intersected with every splat plane whose truncated
//! footprint covers it; hits are sorted front-to-back by intersection depth
//! and alpha-composited, with the environment map filling the residual
//! transmittance. [`render`] bins splats into screen tiles and runs tiles in
//! parallel; [`render_reference`] visits every splat for every pixel and is
//! the equivalence oracle for the tiled path.

mod backward;
mod camera;
mod kernel;
mod mesh;
mod prepare;

use rayon::prelude::*;

pub use backward::{backward, RenderAdjoint, SplatGrad, SplatGradients};
pub use camera::Camera;
pub use mesh::render_mesh_buffers;
pub use prepare::CUTOFF_SIGMA;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::real::Real;
use crate::scene::SceneModel;
use kernel::{composite, tile_looks, Background, HitScratch, Look, intersect, row_candidates, sort_hits, sorted_hits, tile_candidates, Hit, PixelOut, RowRay};
use prepare::{prepare, Prepared};

/// Largest scene the exhaustive reference renderer accepts.
pub const REFERENCE_SPLAT_LIMIT: usize = 10_000;

#[derive(Clone, Copy, Debug)]
pub struct RenderOptions<T> {
    pub tile_size: usize,
    /// Compositing stops once transmittance drops to this value.
    pub transmittance_min: T,
    /// Fixed-order gradient reduction in [`backward`].
    pub deterministic: bool,
}

impl<T: Real> Default for RenderOptions<T> {
    fn default() -> Self {
        Self {
            tile_size: 16,
            transmittance_min: T::lit(1e-4),
            deterministic: true,
        }
    }
}

/// Per-pixel outputs of one rasterization pass, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderBuffers<T> {
    pub width: usize,
    pub height: usize,
    /// RGB in `[0, 1]`.
    pub color: Vec<Vec3<T>>,
    /// Composited inverse camera depth; 0 on background.
    pub disparity: Vec<T>,
    /// Camera-space unit normal facing the camera, or zero.
    pub normal: Vec<Vec3<T>>,
    pub alpha: Vec<T>,
    /// Pairwise depth-distortion `Σᵢⱼ wᵢwⱼ|λᵢ-λⱼ|` of the composited hits.
    pub distortion: Vec<T>,
}

impl<T: Real> RenderBuffers<T> {
    pub fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            color: vec![Vec3::zero(); n],
            disparity: vec![T::zero(); n],
            normal: vec![Vec3::zero(); n],
            alpha: vec![T::zero(); n],
            distortion: vec![T::zero(); n],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Largest absolute per-channel difference over all buffers.
    pub fn max_abs_diff(&self, o: &Self) -> T {
        let mut m = T::zero();
        for i in 0..self.pixel_count() {
            m = m
                .max((self.color[i] - o.color[i]).max_abs())
                .max((self.normal[i] - o.normal[i]).max_abs())
                .max((self.disparity[i] - o.disparity[i]).abs())
                .max((self.alpha[i] - o.alpha[i]).abs())
                .max((self.distortion[i] - o.distortion[i]).abs());
        }
        m
    }

    fn put(&mut self, i: usize, px: PixelOut<T>) {
        self.color[i] = px.color;
        self.disparity[i] = px.disparity;
        self.normal[i] = px.normal;
        self.alpha[i] = px.alpha;
        self.distortion[i] = px.distortion;
    }
}

pub(crate) struct TileGrid {
    pub size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
}

impl TileGrid {
    pub fn new(width: usize, height: usize, size: usize) -> Self {
        Self {
            size,
            tiles_x: width.div_ceil(size),
            tiles_y: height.div_ceil(size),
        }
    }

    pub fn count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Pixel rectangle `[x0, x1) × [y0, y1)` of a tile.
    pub fn pixels(&self, tile: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * self.size;
        let y0 = ty * self.size;
        (x0, (x0 + self.size).min(width), y0, (y0 + self.size).min(height))
    }

    /// Splat indices per tile, in ascending index order.
    pub fn bin<T: Real>(&self, prep: &[Prepared<T>]) -> Vec<Vec<u32>> {
        let mut bins = vec![Vec::new(); self.count()];
        for (i, sp) in prep.iter().enumerate() {
            if !sp.usable {
                continue;
            }
            let Some([x0, y0, x1, y1]) = sp.bbox else {
                continue;
            };
            for ty in y0 / self.size..=y1 / self.size {
                for tx in x0 / self.size..=x1 / self.size {
                    bins[ty * self.tiles_x + tx].push(i as u32);
                }
            }
        }
        bins
    }
}

fn validate_options<T: Real>(opts: &RenderOptions<T>) -> Result<()> {
    if opts.tile_size == 0 {
        return Err(Error::invalid("tile size must be positive"));
    }
    if !(opts.transmittance_min >= T::zero() && opts.transmittance_min < T::one()) {
        return Err(Error::invalid("transmittance threshold must lie in [0, 1)"));
    }
    Ok(())
}

/// Tiled, parallel forward pass.
pub fn render<T: Real>(scene: &SceneModel<T>, camera: &Camera<T>, opts: &RenderOptions<T>) -> Result<RenderBuffers<T>> {
    camera.validate()?;
    validate_options(opts)?;
    let (w, h) = (camera.width, camera.height);
    let prep = prepare(scene, camera);
    let grid = TileGrid::new(w, h, opts.tile_size);
    let bins = grid.bin(&prep);
    let focal = camera.focal();
    let sky = Background::new(&scene.env);

    let tiles: Vec<Vec<PixelOut<T>>> = (0..grid.count())
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = grid.pixels(tile, w, h);
            let cands = tile_candidates(&bins[tile], &prep, false);
            let looks = tile_looks(&bins[tile], &prep);
            let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
            let mut row = Vec::with_capacity(cands.len());
            let mut hits = Vec::with_capacity(cands.len());
            let mut scratch = HitScratch::with_capacity(cands.len());
            for py in y0..y1 {
                let ray = RowRay::new(w, h, focal.as_f64(), py);
                row_candidates(&cands, py, ray, (x0, x1), &mut row);
                for px in x0..x1 {
                    let d = camera.pixel_ray(px, py, focal);
                    let tmin = opts.transmittance_min;
                    sorted_hits(&row, px, d, camera.near, camera.far, tmin, &mut scratch, &mut hits);
                    out.push(composite(&hits, &looks, opts.transmittance_min, || sky.along(camera, d)));
                }
            }
            out
        })
        .collect();

    let mut buffers = RenderBuffers::empty(w, h);
    for (tile, pixels) in tiles.into_iter().enumerate() {
        let (x0, x1, y0, _) = grid.pixels(tile, w, h);
        let tw = x1 - x0;
        for (k, px) in pixels.into_iter().enumerate() {
            buffers.put((y0 + k / tw) * w + x0 + k % tw, px);
        }
    }
    Ok(buffers)
}

/// Exhaustive single-threaded forward pass: every pixel against every splat.
pub fn render_reference<T: Real>(
    scene: &SceneModel<T>,
    camera: &Camera<T>,
    opts: &RenderOptions<T>,
) -> Result<RenderBuffers<T>> {
    if scene.splats.len() > REFERENCE_SPLAT_LIMIT {
        return Err(Error::invalid(format!(
            "reference renderer is limited to {REFERENCE_SPLAT_LIMIT} splats, scene has {}",
            scene.splats.len()
        )));
    }
    camera.validate()?;
    validate_options(opts)?;
    let (w, h) = (camera.width, camera.height);
    let prep = prepare(scene, camera);
    let looks: Vec<Look<T>> = prep.iter().map(Look::of).collect();
    let focal = camera.focal();
    let sky = Background::new(&scene.env);
    let mut buffers = RenderBuffers::empty(w, h);
    let mut hits = Vec::new();
    for py in 0..h {
        for px in 0..w {
            let d = camera.pixel_ray(px, py, focal);
            hits.clear();
            for (idx, sp) in prep.iter().enumerate() {
                if !sp.usable {
                    continue;
                }
                if let Some((lambda, a, b, den)) = intersect(sp, d, camera.near, camera.far) {
                    hits.push(Hit::new(idx as u32, idx as u32, lambda, a, b, den, sp.opacity));
                }
            }
            sort_hits(&mut hits);
            for h in &mut hits {
                h.g = h.gauss();
            }
            let out = composite(&hits, &looks, opts.transmittance_min, || sky.along(camera, d));
            buffers.put(py * w + px, out);
        }
    }
    Ok(buffers)
}
