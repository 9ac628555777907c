//! Toy distillation problem: a textured ground plane seen obliquely, a proxy
//! mesh of the plane, and a splat scene initialized from the proxy with
//! perturbed orientations and heights.

use ggds_core::diffusion::{AnalyticDenoiser, AnalyticPrior, Broadcast, Codec, Denoiser};
use ggds_core::ggds::{optimize, CameraPool, GgdsConfig, LossReport};
use ggds_core::image::Image;
use ggds_core::io::{mean_angular_error, psnr};
use ggds_core::math::{Mat3, Vec3};
use ggds_core::raster::{render, render_mesh_buffers, Camera, RenderOptions};
use ggds_core::scene::{mesh_to_splats, EnvironmentMap, MeshToSplatsOptions, SceneModel, TriangleMesh};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RES: usize = 64;
const HALF: f32 = 4.0;
const QUADS: usize = 35;

/// Ground texture, smooth at the scale of a few pixels.
pub fn texture(x: f64, y: f64) -> Vec3<f64> {
    Vec3::new(
        0.5 + 0.25 * (1.7 * x + 0.3).sin() * (1.3 * y).cos(),
        0.5 + 0.25 * (1.1 * x - 0.8).cos() * (1.9 * y + 0.5).sin(),
        0.45 + 0.2 * (0.9 * x + 1.4 * y).sin(),
    )
}

pub fn train_camera() -> Camera<f32> {
    Camera::look_at(Vec3::new(0.0, -2.0, 3.0), Vec3::new(0.0, 0.5, 0.0), 0.7, RES, RES).unwrap()
}

pub fn heldout_camera() -> Camera<f32> {
    Camera::look_at(Vec3::new(0.35, -1.85, 2.9), Vec3::new(0.1, 0.55, 0.0), 0.7, RES, RES).unwrap()
}

/// Exact image of the textured plane `z = 0` from `camera`: one ray per
/// pixel center, intersected analytically.
pub fn ground_truth(camera: &Camera<f32>) -> Image<f32> {
    let cam: Camera<f64> = camera.cast();
    let f = cam.focal();
    let mut px = Vec::with_capacity(RES * RES);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let d = cam.camera_to_world_dir(cam.pixel_ray(x, y, f));
            let lambda = -cam.position.z / d.z;
            assert!(lambda > 0.0, "ground truth ray misses the plane");
            let hit = cam.position + d * lambda;
            assert!(hit.x.abs() < HALF as f64 && hit.y.abs() < HALF as f64, "view leaves the plane");
            px.push(texture(hit.x, hit.y).cast());
        }
    }
    Image::from_rgb(cam.width, cam.height, &px)
}

pub fn proxy() -> TriangleMesh<f32> {
    TriangleMesh::grid_plane(
        Vec3::new(-HALF, -HALF, 0.0),
        Vec3::new(2.0 * HALF, 0.0, 0.0),
        Vec3::new(0.0, 2.0 * HALF, 0.0),
        QUADS,
        QUADS,
    )
}

/// Proxy splats with each normal tilted by up to `tilt` radians and each
/// center lifted by a uniform offset in `±lift` meters.
pub fn initial_scene(seed: u64, tilt: f32, lift: f32) -> SceneModel<f32> {
    let mesh = proxy();
    let mut splats = mesh_to_splats(&mesh, &MeshToSplatsOptions::default()).unwrap().splats;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in &mut splats {
        s.sh[0] = Vec3::splat(0.5);
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0f32).normalize();
        let r = Mat3::rotation(axis, tilt * rng.random_range(0.5..1.0));
        s.tangent_u = r.mul_vec(s.tangent_u);
        s.tangent_v = r.mul_vec(s.tangent_v);
        s.center.z += lift * rng.random_range(-1.0..1.0);
    }
    SceneModel::new(splats, EnvironmentMap::uniform(8, 4, Vec3::splat(0.5)), mesh).unwrap()
}

pub fn delta_prior(target: &Image<f32>) -> AnalyticDenoiser<f32> {
    AnalyticDenoiser::new(AnalyticPrior::Delta {
        mean: Broadcast::Full(target.clone()),
    })
}

pub fn gaussian_prior(target: &Image<f32>, variance: f32) -> AnalyticDenoiser<f32> {
    AnalyticDenoiser::new(AnalyticPrior::Gaussian {
        mean: Broadcast::Full(target.clone()),
        variance: Broadcast::Scalar(variance),
    })
}

pub fn toy_config(steps: usize) -> GgdsConfig {
    GgdsConfig {
        steps,
        densify_every: 0,
        ..GgdsConfig::default()
    }
}

pub struct ToyRun {
    pub scene: SceneModel<f32>,
    pub totals: Vec<f64>,
    pub reports: Vec<LossReport>,
}

pub fn run(scene: SceneModel<f32>, cfg: &GgdsConfig, denoiser: &mut dyn Denoiser<f32>) -> ToyRun {
    let schedule = cfg.build_schedule().unwrap();
    let mut pool = CameraPool::new(vec![train_camera()]).unwrap();
    let mut reports = Vec::with_capacity(cfg.steps);
    let scene = optimize(scene, cfg, denoiser, &Codec::Identity, &schedule, &mut pool, None, &mut |ev| {
        reports.push(ev.outcome.report.clone());
        Ok(())
    })
    .unwrap();
    let totals = reports.iter().map(|r| r.total).collect();
    ToyRun { scene, totals, reports }
}

/// Exponential moving average with smoothing `0.95`, seeded with the first value.
pub fn ema(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = values.first().copied().unwrap_or(0.0);
    for &v in values {
        acc = 0.95 * acc + 0.05 * v;
        out.push(acc);
    }
    out
}

pub fn view_psnr(scene: &SceneModel<f32>, camera: &Camera<f32>) -> f64 {
    let b = render(scene, camera, &RenderOptions::default()).unwrap();
    let img = Image::from_rgb(RES, RES, &b.color);
    psnr(&img.data, &ground_truth(camera).data).unwrap()
}

/// Mean angular error of rendered normals against the proxy's, and the
/// disparity MAE as a fraction of the proxy's disparity range, over pixels
/// the proxy covers.
pub fn geometry_errors(scene: &SceneModel<f32>, camera: &Camera<f32>) -> (f64, f64) {
    let b = render(scene, camera, &RenderOptions::default()).unwrap();
    let m = render_mesh_buffers(&scene.proxy, camera, 16).unwrap();
    let covered: Vec<usize> = (0..b.pixel_count()).filter(|&i| m.alpha[i] >= 0.5).collect();
    let rn: Vec<_> = covered.iter().map(|&i| b.normal[i]).collect();
    let mn: Vec<_> = covered.iter().map(|&i| m.normal[i]).collect();
    let angle = mean_angular_error(&rn, &mn).unwrap();
    let md: Vec<f64> = covered.iter().map(|&i| m.disparity[i] as f64).collect();
    let range = md.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - md.iter().cloned().fold(f64::INFINITY, f64::min);
    let mae = covered
        .iter()
        .map(|&i| (b.disparity[i] as f64 - m.disparity[i] as f64).abs())
        .sum::<f64>()
        / covered.len() as f64;
    (angle, mae / range)
}
