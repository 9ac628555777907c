//! Render throughput measurement.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::raster::{render, Camera, RenderOptions};
use crate::real::Real;
use crate::scene::{EnvironmentMap, SceneModel, Splat, TriangleMesh};

/// Throughput of the reference GPU implementation, quoted for context:
/// frames per second at 960 rows.
pub const REFERENCE_GPU_FPS: f64 = 60.0;
pub const REFERENCE_GPU_ROWS: usize = 960;

/// Street-like synthetic scene: a ground layer and building facades of
/// small splats in a 60 m × 60 m block, seen from eye height, at the given
/// resolution.
pub fn synthetic_scene(count: usize, width: usize, height: usize, seed: u64) -> Result<(SceneModel<f32>, Camera<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splats = Vec::with_capacity(count);
    for i in 0..count {
        let (center, normal) = if i % 2 == 0 {
            (
                Vec3::new(rng.random_range(-30.0..30.0), rng.random_range(2.0..62.0), 0.0),
                Vec3::unit_z(),
            )
        } else {
            let side: f32 = if rng.random::<bool>() { -8.0 } else { 8.0 };
            (
                Vec3::new(side, rng.random_range(2.0..62.0), rng.random_range(0.0..12.0)),
                Vec3::new(-side.signum(), 0.0, 0.0),
            )
        };
        let (u0, v0) = crate::scene::any_tangent_frame(normal);
        let r = Mat3::rotation(normal, rng.random_range(0.0..std::f32::consts::TAU));
        splats.push(Splat {
            center,
            tangent_u: r.mul_vec(u0),
            tangent_v: r.mul_vec(v0),
            scale_u: rng.random_range(0.08..0.3),
            scale_v: rng.random_range(0.08..0.3),
            opacity: rng.random_range(0.3..0.95),
            sh: vec![Vec3::new(rng.random(), rng.random(), rng.random())],
        });
    }
    let env = EnvironmentMap::uniform(16, 8, Vec3::new(0.6, 0.7, 0.9));
    let scene = SceneModel::new(splats, env, TriangleMesh::default())?;
    let camera = Camera::look_at(Vec3::new(0.0, 0.0, 1.7), Vec3::new(0.0, 20.0, 0.8), 1.0, width, height)?;
    Ok((scene, camera))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchResult {
    pub frames: usize,
    /// Total wall time of the timed frames.
    pub seconds: f64,
    pub fps: f64,
    pub threads: usize,
}

/// Renders `frames` frames (after one warm-up frame) on a dedicated pool of
/// `threads` workers. `fps` comes from the median frame time, which shrugs
/// off interference from other processes.
pub fn measure_fps<T: Real>(
    scene: &SceneModel<T>,
    camera: &Camera<T>,
    opts: &RenderOptions<T>,
    frames: usize,
    threads: usize,
) -> Result<BenchResult> {
    if frames == 0 || threads == 0 {
        return Err(Error::invalid("bench needs at least one frame and one thread"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build a {threads}-thread pool: {e}")))?;
    pool.install(|| -> Result<BenchResult> {
        render(scene, camera, opts)?;
        let mut times = Vec::with_capacity(frames);
        for _ in 0..frames {
            let start = Instant::now();
            render(scene, camera, opts)?;
            times.push(start.elapsed().as_secs_f64());
        }
        let seconds = times.iter().sum();
        times.sort_by(f64::total_cmp);
        let median = if frames % 2 == 1 {
            times[frames / 2]
        } else {
            0.5 * (times[frames / 2 - 1] + times[frames / 2])
        };
        Ok(BenchResult {
            frames,
            seconds,
            fps: 1.0 / median.max(1e-12),
            threads,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_scene_is_visible() {
        let (scene, cam) = synthetic_scene(100_000, 64, 48, 1).unwrap();
        assert_eq!(scene.len(), 100_000);
        let b = render(&scene, &cam, &RenderOptions::default()).unwrap();
        let covered = b.alpha.iter().filter(|&&a| a > 0.5).count();
        assert!(covered > b.pixel_count() / 4);
    }

    #[test]
    fn measures_positive_rate() {
        let (scene, cam) = synthetic_scene(500, 32, 32, 2).unwrap();
        let r = measure_fps(&scene, &cam, &RenderOptions::default(), 2, 1).unwrap();
        assert!(r.fps > 0.0 && r.frames == 2 && r.threads == 1);
        assert!(measure_fps(&scene, &cam, &RenderOptions::default(), 0, 1).is_err());
    }
}
