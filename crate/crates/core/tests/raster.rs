mod common;

use common::*;
use ggds_core::math::Vec3;
use ggds_core::raster::{backward, render, render_reference, Camera, RenderAdjoint, RenderOptions};
use ggds_core::scene::{EnvironmentMap, Splat, TriangleMesh, SceneModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn facing_camera() -> Camera<f64> {
    Camera::look_at_up(Vec3::new(0.0, 0.0, 5.0), Vec3::zero(), Vec3::unit_y(), 0.8, 16, 16).unwrap()
}

fn flat_splat(z: f64, color: Vec3<f64>, opacity: f64, scale: f64) -> Splat<f64> {
    Splat {
        center: Vec3::new(0.0, 0.0, z),
        tangent_u: Vec3::unit_x(),
        tangent_v: Vec3::unit_y(),
        scale_u: scale,
        scale_v: scale,
        opacity,
        sh: vec![color],
    }
}

#[test]
fn empty_scene_shows_environment() {
    let env = EnvironmentMap::uniform(8, 4, Vec3::new(0.1, 0.6, 0.9));
    let scene = SceneModel::new(vec![], env, TriangleMesh::default()).unwrap();
    let cam = facing_camera();
    let b = render(&scene, &cam, &RenderOptions::default()).unwrap();
    assert!(b.color.iter().all(|c| (*c - Vec3::new(0.1, 0.6, 0.9)).max_abs() < 1e-12));
    assert!(b.alpha.iter().all(|&a| a == 0.0));
    assert_eq!(b, render_reference(&scene, &cam, &RenderOptions::default()).unwrap());
}

#[test]
fn opaque_facing_splat_covers_center() {
    let env = EnvironmentMap::uniform(8, 4, Vec3::splat(0.5));
    let scene = SceneModel::new(
        vec![flat_splat(0.0, Vec3::new(1.0, 0.0, 0.0), 1.0, 1e3)],
        env,
        TriangleMesh::default(),
    )
    .unwrap();
    let b = render(&scene, &facing_camera(), &RenderOptions::default()).unwrap();
    let i = 8 * 16 + 8;
    assert!((b.color[i] - Vec3::new(1.0, 0.0, 0.0)).max_abs() < 1e-6);
    assert!((b.alpha[i] - 1.0).abs() < 1e-6);
    assert!((b.normal[i] - Vec3::unit_z()).max_abs() < 1e-12);
    assert!((b.disparity[i] - 0.2).abs() < 1e-6);
}

#[test]
fn stacked_half_opacity_composites() {
    let (c1, c2, ce) = (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 1.0));
    let env = EnvironmentMap::uniform(8, 4, ce);
    let scene = SceneModel::new(
        vec![flat_splat(-1.0, c2, 0.5, 1e4), flat_splat(1.0, c1, 0.5, 1e4)],
        env,
        TriangleMesh::default(),
    )
    .unwrap();
    let b = render(&scene, &facing_camera(), &RenderOptions::default()).unwrap();
    let want = c1 * 0.5 + c2 * 0.25 + ce * 0.25;
    assert!((b.color[8 * 16 + 8] - want).max_abs() < 1e-6);
}

#[test]
fn occluded_splat_gets_no_color_gradient() {
    let env = EnvironmentMap::uniform(8, 4, Vec3::splat(0.5));
    let scene = SceneModel::new(
        vec![
            flat_splat(-1.0, Vec3::splat(0.3), 0.8, 0.3),
            flat_splat(1.0, Vec3::splat(0.7), 1.0, 1e4),
        ],
        env,
        TriangleMesh::default(),
    )
    .unwrap();
    let cam = facing_camera();
    let mut adj = RenderAdjoint::zeros(16, 16);
    adj.color.iter_mut().for_each(|c| *c = Vec3::splat(1.0));
    let g = backward(&scene, &cam, &adj, &exact_opts()).unwrap();
    // The front splat's footprint is not exactly flat, so a sliver leaks.
    assert!(g.grads[1].sh[0].x > 1.0);
    assert!(g.grads[0].sh[0].max_abs() < 1e-6 * g.grads[1].sh[0].x);
}

#[test]
fn opacity_towards_target_lowers_l2_loss() {
    let env = EnvironmentMap::uniform(8, 4, Vec3::splat(0.1));
    let target = Vec3::new(0.9, 0.4, 0.2);
    let scene = SceneModel::new(vec![flat_splat(0.0, target, 0.5, 1.0)], env, TriangleMesh::default()).unwrap();
    let cam = facing_camera();
    let opts = exact_opts();
    let b = render(&scene, &cam, &opts).unwrap();
    let mut adj = RenderAdjoint::zeros(16, 16);
    for i in 0..256 {
        adj.color[i] = (b.color[i] - target) * 2.0;
    }
    let g = backward(&scene, &cam, &adj, &opts).unwrap();
    assert!(g.grads[0].opacity < 0.0);
    let loss = |s: &SceneModel<f64>| -> f64 {
        render(s, &cam, &opts).unwrap().color.iter().map(|c| (*c - target).norm_sq()).sum()
    };
    let mut plus = scene.clone();
    plus.splats[0].opacity += 1e-5;
    let mut minus = scene.clone();
    minus.splats[0].opacity -= 1e-5;
    let fd = (loss(&plus) - loss(&minus)) / 2e-5;
    assert!(fd < 0.0 && (fd - g.grads[0].opacity).abs() < 1e-6 * fd.abs());
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 4 {
        let (scene, cam) = random_small_scene(&mut rng, 5, 24);
        let (q, d, c) = discontinuity_margins(&scene, &cam);
        if q < 5e-3 || d < 1e-3 || c < 1e-2 {
            continue;
        }
        let adj = random_adjoint(&mut rng, 24, 24);
        let errs = gradient_errors(&scene, &cam, &adj, &exact_opts(), 1e-5);
        for (name, e) in GROUPS.iter().zip(errs) {
            assert!(e < 1e-6, "{name}: relative error {e:e}");
        }
        checked += 1;
    }
}

#[test]
fn deterministic_and_fast_reductions_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (scene, cam) = random_small_scene(&mut rng, 40, 48);
    let adj = random_adjoint(&mut rng, 48, 48);
    let det = backward(&scene, &cam, &adj, &RenderOptions::default()).unwrap();
    let again = backward(&scene, &cam, &adj, &RenderOptions::default()).unwrap();
    assert_eq!(det, again);
    let fast = backward(
        &scene,
        &cam,
        &adj,
        &RenderOptions {
            deterministic: false,
            ..Default::default()
        },
    )
    .unwrap();
    for (a, b) in det.grads.iter().zip(&fast.grads) {
        assert!((a.center - b.center).max_abs() < 1e-9 * (1.0 + a.center.max_abs()));
        assert!((a.opacity - b.opacity).abs() < 1e-9 * (1.0 + a.opacity.abs()));
    }
}

#[test]
fn adjoint_resolution_is_checked() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (scene, cam) = random_small_scene(&mut rng, 3, 16);
    let adj = RenderAdjoint::zeros(8, 16);
    assert!(backward(&scene, &cam, &adj, &RenderOptions::default()).is_err());
}

#[test]
fn tiled_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..10 {
        let (scene, cam) = random_small_scene(&mut rng, 60, 40);
        let opts = RenderOptions::default();
        let tiled = render(&scene, &cam, &opts).unwrap();
        let reference = render_reference(&scene, &cam, &opts).unwrap();
        assert_eq!(tiled, reference);
    }
}

#[test]
fn reference_limit_is_enforced() {
    let env = EnvironmentMap::uniform(2, 1, Vec3::splat(0.5));
    let splats = vec![flat_splat(0.0, Vec3::splat(0.5), 0.5, 0.1); 10_001];
    let scene = SceneModel::new(splats, env, TriangleMesh::default()).unwrap();
    assert!(render_reference(&scene, &facing_camera(), &RenderOptions::default()).is_err());
}
