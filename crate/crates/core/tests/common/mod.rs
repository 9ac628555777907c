//! Scene generators and oracles shared by the integration tests.
#![allow(dead_code)]

use ggds_core::math::{orthonormalize_pair, Vec3};
use ggds_core::raster::{render, Camera, RenderAdjoint, RenderBuffers, RenderOptions, SplatGrad, CUTOFF_SIGMA};
use ggds_core::scene::{sh, EnvironmentMap, SceneModel, Splat, TriangleMesh};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn v3(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vec3<f64> {
    Vec3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi))
}

pub fn random_env(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> EnvironmentMap<f64> {
    let (w, h) = (8, 4);
    let pixels = (0..w * h).map(|_| v3(rng, lo, hi)).collect();
    EnvironmentMap::from_pixels(w, h, pixels).unwrap()
}

/// Splat facing roughly towards `eye` with a random tilt of at most
/// `max_tilt` radians.
pub fn facing_splat(
    rng: &mut ChaCha8Rng,
    center: Vec3<f64>,
    eye: Vec3<f64>,
    max_tilt: f64,
    scales: (f64, f64),
    degree: usize,
) -> Splat<f64> {
    let to_eye = (eye - center).normalize();
    let tilt = v3(rng, -1.0, 1.0) * max_tilt;
    let n = (to_eye + tilt).normalize();
    let helper = v3(rng, -1.0, 1.0);
    let u = (helper - n * helper.dot(n)).normalize();
    let v = n.cross(u);
    let mut coeffs = vec![v3(rng, 0.3, 0.7)];
    for _ in 1..sh::coeff_count(degree) {
        coeffs.push(v3(rng, -0.04, 0.04));
    }
    Splat {
        center,
        tangent_u: u,
        tangent_v: v,
        scale_u: rng.random_range(scales.0..scales.1),
        scale_v: rng.random_range(scales.0..scales.1),
        opacity: rng.random_range(0.2..0.9),
        sh: coeffs,
    }
}

pub fn scene_of(splats: Vec<Splat<f64>>, env: EnvironmentMap<f64>) -> SceneModel<f64> {
    SceneModel::new(splats, env, TriangleMesh::default()).unwrap()
}

/// Random small scene in front of a camera looking down world `-y`-ish.
pub fn random_small_scene(rng: &mut ChaCha8Rng, count: usize, res: usize) -> (SceneModel<f64>, Camera<f64>) {
    let eye = v3(rng, -0.5, 0.5) + Vec3::new(0.0, -4.0, 1.5);
    let target = Vec3::new(0.0, 0.0, 1.5) + v3(rng, -0.3, 0.3);
    let camera = Camera::look_at(eye, target, 0.9, res, res).unwrap();
    let degree = rng.random_range(0..=2);
    let splats = (0..count)
        .map(|_| {
            let c = target + v3(rng, -0.9, 0.9);
            facing_splat(rng, c, eye, 0.6, (0.15, 0.5), degree)
        })
        .collect();
    (scene_of(splats, random_env(rng, 0.2, 0.8)), camera)
}

/// Distance of a configuration from the rasterizer's discontinuities,
/// computed independently of the library: the smallest gap between a hit's
/// squared Mahalanobis radius and the cutoff, between two hit depths at one
/// pixel, and of a hit's ray–plane cosine from zero.
pub fn discontinuity_margins(scene: &SceneModel<f64>, camera: &Camera<f64>) -> (f64, f64, f64) {
    let f = 0.5 * camera.height as f64 / (0.5 * camera.fov_y).tan();
    let cut = CUTOFF_SIGMA * CUTOFF_SIGMA;
    let (mut q_gap, mut depth_gap, mut cos_min) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for py in 0..camera.height {
        for px in 0..camera.width {
            let x = (px as f64 + 0.5 - 0.5 * camera.width as f64) / f;
            let y = -(py as f64 + 0.5 - 0.5 * camera.height as f64) / f;
            let d = camera.rotation.tmul_vec(Vec3::new(x, y, -1.0));
            let mut depths = Vec::new();
            for s in &scene.splats {
                let (u, v) = orthonormalize_pair(s.tangent_u, s.tangent_v).unwrap();
                let n = u.cross(v);
                let den = d.dot(n);
                let lambda = (s.center - camera.position).dot(n) / den;
                if !(lambda > camera.near) {
                    continue;
                }
                let hit = camera.position + d * lambda - s.center;
                let a = hit.dot(u) / s.scale_u;
                let b = hit.dot(v) / s.scale_v;
                let q = a * a + b * b;
                q_gap = q_gap.min((q - cut).abs());
                if q <= cut {
                    depths.push(lambda);
                    cos_min = cos_min.min(den.abs() / d.norm());
                }
            }
            depths.sort_by(f64::total_cmp);
            for w in depths.windows(2) {
                depth_gap = depth_gap.min(w[1] - w[0]);
            }
        }
    }
    (q_gap, depth_gap, cos_min)
}

pub fn random_adjoint(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RenderAdjoint<f64> {
    let mut adj = RenderAdjoint::zeros(w, h);
    for i in 0..w * h {
        adj.color[i] = v3(rng, -1.0, 1.0);
        adj.disparity[i] = rng.random_range(-1.0..1.0);
        adj.normal[i] = v3(rng, -1.0, 1.0);
        adj.distortion[i] = rng.random_range(-1.0..1.0);
    }
    adj
}

pub fn inner(b: &RenderBuffers<f64>, adj: &RenderAdjoint<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..b.pixel_count() {
        s += b.color[i].dot(adj.color[i])
            + b.disparity[i] * adj.disparity[i]
            + b.normal[i].dot(adj.normal[i])
            + b.distortion[i] * adj.distortion[i];
    }
    s
}

pub const GROUPS: [&str; 7] = ["center", "tangent_u", "tangent_v", "scale_u", "scale_v", "opacity", "sh"];

/// Flat views of one parameter group of a splat or gradient.
fn group_mut(s: &mut Splat<f64>, g: usize) -> Vec<&mut f64> {
    match g {
        0 => vec![&mut s.center.x, &mut s.center.y, &mut s.center.z],
        1 => vec![&mut s.tangent_u.x, &mut s.tangent_u.y, &mut s.tangent_u.z],
        2 => vec![&mut s.tangent_v.x, &mut s.tangent_v.y, &mut s.tangent_v.z],
        3 => vec![&mut s.scale_u],
        4 => vec![&mut s.scale_v],
        5 => vec![&mut s.opacity],
        _ => s.sh.iter_mut().flat_map(|c| [&mut c.x, &mut c.y, &mut c.z]).collect(),
    }
}

fn group_of(gr: &SplatGrad<f64>, g: usize) -> Vec<f64> {
    match g {
        0 => gr.center.to_array().to_vec(),
        1 => gr.tangent_u.to_array().to_vec(),
        2 => gr.tangent_v.to_array().to_vec(),
        3 => vec![gr.scale_u],
        4 => vec![gr.scale_v],
        5 => vec![gr.opacity],
        _ => gr.sh.iter().flat_map(|c| c.to_array()).collect(),
    }
}

/// Per-group relative error `max|analytic − fd| / max|fd|` of central
/// differences with step `h` against the library backward pass.
pub fn gradient_errors(
    scene: &SceneModel<f64>,
    camera: &Camera<f64>,
    adj: &RenderAdjoint<f64>,
    opts: &RenderOptions<f64>,
    h: f64,
) -> [f64; 7] {
    let grads = ggds_core::raster::backward(scene, camera, adj, opts).unwrap();
    let mut diff = [0f64; 7];
    let mut scale = [0f64; 7];
    let mut work = scene.clone();
    for i in 0..scene.splats.len() {
        for g in 0..7 {
            let analytic = group_of(&grads.grads[i], g);
            for (k, a) in analytic.iter().enumerate() {
                let orig = *group_mut(&mut work.splats[i], g)[k];
                *group_mut(&mut work.splats[i], g)[k] = orig + h;
                let plus = inner(&render(&work, camera, opts).unwrap(), adj);
                *group_mut(&mut work.splats[i], g)[k] = orig - h;
                let minus = inner(&render(&work, camera, opts).unwrap(), adj);
                *group_mut(&mut work.splats[i], g)[k] = orig;
                let fd = (plus - minus) / (2.0 * h);
                diff[g] = diff[g].max((a - fd).abs());
                scale[g] = scale[g].max(fd.abs());
            }
        }
    }
    let mut out = [0.0; 7];
    for g in 0..7 {
        out[g] = if scale[g] > 1e-12 { diff[g] / scale[g] } else { diff[g] };
    }
    out
}

/// Options for gradient checks: no early termination.
pub fn exact_opts() -> RenderOptions<f64> {
    RenderOptions {
        transmittance_min: 0.0,
        ..RenderOptions::default()
    }
}
pub mod toy;
