//! One distillation step, the optimization loop and deferred rendering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffusion::{
    add_noise, ddim_denoise_n, ddim_invert_n, Codec, Conditioning, Denoiser, DiffusionSchedule, InversionSolve,
    LatentImage,
};
use crate::error::{Error, Result};
use crate::ggds::{
    compute_losses, densify_prune, sgld_update, AdamState, DensifyOutcome, DensifyStats, GgdsConfig, LossReport,
    NoiseMode, Preconditioner, SgldParams,
};
use crate::image::Image;
use crate::math::Vec3;
use crate::raster::{backward, render, render_mesh_buffers, Camera, RenderBuffers, RenderOptions};
use crate::real::{cast, Real};
use crate::scene::SceneModel;

/// Viewpoints `ψ_i` sampled during optimization, with their proxy renders.
#[derive(Clone, Debug)]
pub struct CameraPool<T> {
    cameras: Vec<Camera<T>>,
    mesh: Vec<Option<RenderBuffers<T>>>,
}

impl<T: Real> CameraPool<T> {
    pub fn new(cameras: Vec<Camera<T>>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::invalid("camera pool needs at least one camera"));
        }
        for c in &cameras {
            c.validate()?;
        }
        let mesh = vec![None; cameras.len()];
        Ok(Self { cameras, mesh })
    }

    /// `count` cameras at eye height 1.2–2.2 m above `z = 0`, uniformly
    /// placed within `radius` of `center` with uniform yaw, looking slightly
    /// downwards.
    pub fn jittered_ground<R: Rng>(
        center: Vec3<T>,
        radius: f64,
        count: usize,
        fov_y: T,
        width: usize,
        height: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut cams = Vec::with_capacity(count);
        for _ in 0..count {
            let r = radius * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let yaw = rng.random_range(0.0..std::f64::consts::TAU);
            let z = rng.random_range(1.2..2.2);
            let eye = Vec3::new(
                center.x.as_f64() + r * a.cos(),
                center.y.as_f64() + r * a.sin(),
                z,
            );
            let target = eye + Vec3::new(yaw.cos(), yaw.sin(), -0.15);
            cams.push(Camera::look_at(eye.cast(), target.cast(), fov_y, width, height)?);
        }
        Self::new(cams)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn camera(&self, i: usize) -> &Camera<T> {
        &self.cameras[i]
    }

    /// Proxy-mesh buffers for camera `i`, rendered on first use.
    pub fn mesh_buffers(&mut self, i: usize, scene: &SceneModel<T>, tile: usize) -> Result<&RenderBuffers<T>> {
        if self.mesh[i].is_none() {
            let b = render_mesh_buffers(&scene.proxy, &self.cameras[i], tile)?;
            self.mesh[i] = Some(b);
        }
        Ok(self.mesh[i].as_ref().expect("filled above"))
    }
}

/// Draws `t` uniformly from `[t_min(k), t_max]`.
pub fn sample_noise_level<R: Rng>(k: usize, cfg: &GgdsConfig, rng: &mut R) -> usize {
    let lo = cfg.t_min_at(k).min(cfg.t_max);
    rng.random_range(lo..=cfg.t_max)
}

/// Result of one [`Optimizer::step`].
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub report: LossReport,
    /// Splats whose update was skipped for a non-finite gradient.
    pub skipped: usize,
    pub densify: Option<DensifyOutcome>,
}

/// Mutable state of a distillation run: RNG stream, preconditioner moments
/// and density statistics.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    pub config: GgdsConfig,
    /// Optional text conditioning forwarded to the denoiser.
    pub prompt: Option<String>,
    pub render_options: RenderOptions<T>,
    rng: ChaCha8Rng,
    adam: Option<AdamState<T>>,
    stats: DensifyStats,
    extent: f64,
}

fn scene_extent<T: Real>(scene: &SceneModel<T>) -> f64 {
    let mut lo = Vec3::splat(f64::INFINITY);
    let mut hi = Vec3::splat(f64::NEG_INFINITY);
    let mut grow = |p: Vec3<f64>| {
        lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    };
    for v in &scene.proxy.vertices {
        grow(v.cast());
    }
    for s in &scene.splats {
        grow(s.center.cast());
    }
    let d = (hi - lo).norm();
    if d.is_finite() && d > 1e-6 {
        d
    } else {
        1.0
    }
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: GgdsConfig, scene: &SceneModel<T>) -> Result<Self> {
        config.validate()?;
        if scene.len() > config.cap {
            return Err(Error::Capacity {
                requested: scene.len(),
                cap: config.cap,
            });
        }
        let geometry = config.lambda_norm > 0.0 || config.lambda_disp > 0.0;
        if geometry && scene.proxy.is_empty() {
            return Err(Error::invalid("geometry losses need a proxy mesh"));
        }
        let sh_count = crate::scene::sh::coeff_count(scene.sh_degree);
        let adam = match config.preconditioner {
            Preconditioner::Adam => Some(AdamState::new(scene.len(), sh_count)),
            Preconditioner::None => None,
        };
        Ok(Self {
            render_options: RenderOptions {
                deterministic: config.deterministic,
                ..RenderOptions::default()
            },
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            prompt: None,
            adam,
            stats: DensifyStats::new(scene.len()),
            extent: scene_extent(scene),
            config,
        })
    }

    /// Scene extent used to scale position steps and the split threshold.
    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// Runs step `k`: render a pooled view, invert (or noise) its latent to
    /// a sampled level, denoise with `N` steps under proxy-disparity
    /// conditioning, take the decoded image as target, and apply one
    /// Langevin update from the rasterizer gradients.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        scene: &mut SceneModel<T>,
        k: usize,
        pool: &mut CameraPool<T>,
        denoiser: &mut dyn Denoiser<T>,
        codec: &Codec,
        schedule: &DiffusionSchedule,
    ) -> Result<StepOutcome> {
        self.step_inner(scene, k, pool, denoiser, codec, schedule)
            .map_err(|e| e.at_step(k))
    }

    fn step_inner(
        &mut self,
        scene: &mut SceneModel<T>,
        k: usize,
        pool: &mut CameraPool<T>,
        denoiser: &mut dyn Denoiser<T>,
        codec: &Codec,
        schedule: &DiffusionSchedule,
    ) -> Result<StepOutcome> {
        let cfg = &self.config;
        if schedule.steps() < cfg.t_max {
            return Err(Error::invalid(format!(
                "schedule has {} levels but t_max is {}",
                schedule.steps(),
                cfg.t_max
            )));
        }
        let view = self.rng.random_range(0..pool.len());
        let camera = pool.camera(view).clone();
        let rendered = render(scene, &camera, &self.render_options)?;
        let x = Image::from_rgb(camera.width, camera.height, &rendered.color);
        let z0 = codec.encode(&x)?;

        let t = sample_noise_level(k, cfg, &mut self.rng);
        debug_assert!(t >= cfg.t_min_at(k).min(cfg.t_max) && t <= cfg.t_max);

        let needs_mesh = !scene.proxy.is_empty();
        let mesh = if needs_mesh {
            pool.mesh_buffers(view, scene, self.render_options.tile_size)?.clone()
        } else {
            RenderBuffers::empty(camera.width, camera.height)
        };
        let disp_image = Image::from_vec(
            camera.width,
            camera.height,
            1,
            mesh.disparity.clone(),
        )?;
        let disp_latent = codec.encode(&disp_image)?;
        let cond = Conditioning {
            disparity: needs_mesh.then_some(&disp_latent),
            text: self.prompt.as_deref(),
        };

        let generated_latent = if t == 0 {
            z0
        } else {
            let zt = match cfg.noise_mode {
                NoiseMode::Inversion => ddim_invert_n(
                    &LatentImage::clean(z0),
                    t,
                    cfg.denoise_steps,
                    denoiser,
                    cond,
                    schedule,
                    InversionSolve::Explicit,
                )?,
                NoiseMode::Random => {
                    let data = (0..z0.data.len())
                        .map(|_| cast::<f64, T>(self.rng.sample(StandardNormal)))
                        .collect();
                    let eps = Image::from_vec(z0.width, z0.height, z0.channels, data)?;
                    add_noise(&z0, &eps, t, schedule)?
                }
            };
            ddim_denoise_n(&zt, cfg.denoise_steps, denoiser, cond, schedule)?.data
        };
        let generated = codec.decode(&generated_latent)?;

        let (mut report, adjoint) = compute_losses(&rendered, &generated, &mesh, &camera, t, schedule, cfg)?;
        report.view = view;
        if !report.is_finite() {
            return Err(Error::invalid("loss is not finite"));
        }
        let grads = backward(scene, &camera, &adjoint, &self.render_options)?;
        self.stats.observe(scene, &grads, &camera);

        let direction = match &mut self.adam {
            Some(adam) => adam.precondition(&grads)?,
            None => grads,
        };
        let params = SgldParams::from_config(cfg, k, self.extent);
        let sgld = sgld_update(scene, &direction, &params, &mut self.rng)?;

        let mut densify = None;
        let done = k + 1;
        if cfg.densify_every > 0 && done % cfg.densify_every == 0 && done <= cfg.densify_until {
            let out = densify_prune(scene, &self.stats, cfg, self.extent);
            if let Some(adam) = &mut self.adam {
                adam.remap(&out.sources);
            }
            self.stats = DensifyStats::new(scene.len());
            densify = Some(out);
        }
        if scene.len() > cfg.cap.min(scene.cap) {
            return Err(Error::Capacity {
                requested: scene.len(),
                cap: cfg.cap,
            });
        }
        Ok(StepOutcome {
            report,
            skipped: sgld.skipped,
            densify,
        })
    }
}

/// Progress passed to the [`optimize`] callback after every step.
pub struct StepEvent<'a, T> {
    pub k: usize,
    pub outcome: &'a StepOutcome,
    pub scene: &'a SceneModel<T>,
}

/// Runs `config.steps` distillation steps, calling `on_step` after each.
/// An error from the callback stops the run and is returned unchanged.
#[allow(clippy::too_many_arguments)]
pub fn optimize<T: Real>(
    mut scene: SceneModel<T>,
    config: &GgdsConfig,
    denoiser: &mut dyn Denoiser<T>,
    codec: &Codec,
    schedule: &DiffusionSchedule,
    pool: &mut CameraPool<T>,
    prompt: Option<String>,
    on_step: &mut dyn FnMut(&StepEvent<'_, T>) -> Result<()>,
) -> Result<SceneModel<T>> {
    let mut opt = Optimizer::new(config.clone(), &scene)?;
    opt.prompt = prompt;
    scene.cap = scene.cap.min(config.cap);
    for k in 0..config.steps {
        let outcome = opt.step(&mut scene, k, pool, denoiser, codec, schedule)?;
        on_step(&StepEvent {
            k,
            outcome: &outcome,
            scene: &scene,
        })?;
    }
    Ok(scene)
}

/// Largest level whose `ᾱ` is at least 0.9: the "slightly noisy" default.
pub fn default_defer_level(schedule: &DiffusionSchedule) -> usize {
    schedule.last_level_above(0.9)
}

/// Renders, encodes, noises the latent to `t_defer`, denoises back with `n`
/// DDIM steps and decodes.
#[allow(clippy::too_many_arguments)]
pub fn deferred_render<T: Real, R: Rng>(
    scene: &SceneModel<T>,
    camera: &Camera<T>,
    denoiser: &mut dyn Denoiser<T>,
    codec: &Codec,
    schedule: &DiffusionSchedule,
    t_defer: usize,
    n: usize,
    opts: &RenderOptions<T>,
    rng: &mut R,
) -> Result<Image<T>> {
    schedule.check_level(t_defer)?;
    let rendered = render(scene, camera, opts)?;
    let x = Image::from_rgb(camera.width, camera.height, &rendered.color);
    let z0 = codec.encode(&x)?;
    if t_defer == 0 {
        return codec.decode(&z0);
    }
    let data = (0..z0.data.len())
        .map(|_| cast::<f64, T>(rng.sample(StandardNormal)))
        .collect();
    let eps = Image::from_vec(z0.width, z0.height, z0.channels, data)?;
    let zt = add_noise(&z0, &eps, t_defer, schedule)?;
    let out = ddim_denoise_n(&zt, n, denoiser, Conditioning::none(), schedule)?;
    codec.decode(&out.data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{AnalyticDenoiser, AnalyticPrior, Broadcast, ScheduleKind};
    use crate::scene::{mesh_to_splats, EnvironmentMap, MeshToSplatsOptions, TriangleMesh};

    fn plane_scene() -> SceneModel<f64> {
        let mesh = TriangleMesh::grid_plane(
            Vec3::new(-2.0, -2.0, 0.0),
            Vec3::new(4.0, 0.0, 0.0),
            Vec3::new(0.0, 4.0, 0.0),
            6,
            6,
        );
        let splats = mesh_to_splats(&mesh, &MeshToSplatsOptions::default()).unwrap().splats;
        SceneModel::new(splats, EnvironmentMap::uniform(4, 2, Vec3::splat(0.3)), mesh).unwrap()
    }

    fn pool() -> CameraPool<f64> {
        let cam = Camera::look_at(Vec3::new(0.0, -3.0, 3.0), Vec3::zero(), 0.9, 16, 16).unwrap();
        CameraPool::new(vec![cam]).unwrap()
    }

    fn quiet_config() -> GgdsConfig {
        GgdsConfig {
            steps: 4,
            schedule_steps: 100,
            t_max: 80,
            t_min_start: 50,
            t_min_end: 2,
            lambda_lpips: 0.0,
            lambda_norm: 0.0,
            lambda_disp: 0.0,
            lambda_tv: 0.0,
            lambda_noise: 0.0,
            densify_every: 0,
            ..Default::default()
        }
    }

    #[test]
    fn noise_levels_respect_annealed_bounds() {
        let cfg = quiet_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 0..=cfg.steps {
            for _ in 0..200 {
                let t = sample_noise_level(k, &cfg, &mut rng);
                assert!(t >= cfg.t_min_at(k) && t <= cfg.t_max);
            }
        }
        assert_eq!(cfg.t_min_at(cfg.steps), cfg.t_min_end);
    }

    #[test]
    fn first_step_range_covers_both_endpoints() {
        let cfg = GgdsConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws: Vec<usize> = (0..100_000).map(|_| sample_noise_level(0, &cfg, &mut rng)).collect();
        assert_eq!(*draws.iter().min().unwrap(), cfg.t_min_start);
        assert_eq!(*draws.iter().max().unwrap(), cfg.t_max);
    }

    #[test]
    fn degenerate_interval_is_deterministic() {
        let cfg = GgdsConfig {
            t_min_start: 800,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..100).all(|_| sample_noise_level(0, &cfg, &mut rng) == 800));
    }

    #[test]
    fn delta_prior_at_own_render_is_a_fixed_point() {
        let mut scene = plane_scene();
        let mut pool = pool();
        let cfg = quiet_config();
        let schedule = cfg.build_schedule().unwrap();
        let x = render(&scene, pool.camera(0), &RenderOptions::default()).unwrap();
        let mu = Image::from_rgb(16, 16, &x.color);
        let mut den = AnalyticDenoiser::new(AnalyticPrior::Delta {
            mean: Broadcast::Full(mu),
        });
        let before = scene.clone();
        let mut opt = Optimizer::new(cfg.clone(), &scene).unwrap();
        for k in 0..cfg.steps {
            let out = opt
                .step(&mut scene, k, &mut pool, &mut den, &Codec::Identity, &schedule)
                .unwrap();
            assert!(out.report.gen_l1 < 1e-12, "gen loss {}", out.report.gen_l1);
        }
        assert_eq!(scene, before);
    }

    #[test]
    fn same_seed_gives_identical_scenes() {
        let run = || {
            let scene = plane_scene();
            let mut pool = pool();
            let cfg = GgdsConfig {
                lambda_norm: 0.1,
                lambda_disp: 0.1,
                lambda_noise: 1e-3,
                ..quiet_config()
            };
            let schedule = cfg.build_schedule().unwrap();
            let mut den = AnalyticDenoiser::new(AnalyticPrior::Gaussian {
                mean: Broadcast::Scalar(0.6),
                variance: Broadcast::Scalar(0.01),
            });
            optimize(scene, &cfg, &mut den, &Codec::Identity, &schedule, &mut pool, None, &mut |_| Ok(())).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn geometry_losses_require_a_proxy() {
        let mut scene = plane_scene();
        scene.proxy = TriangleMesh::default();
        let cfg = GgdsConfig::default();
        assert!(Optimizer::new(cfg, &scene).is_err());
    }

    #[test]
    fn deferred_render_identity_and_delta_cases() {
        let scene = plane_scene();
        let cam = pool().camera(0).clone();
        let schedule = DiffusionSchedule::new(100, ScheduleKind::default()).unwrap();
        let opts = RenderOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let plain = render(&scene, &cam, &opts).unwrap();
        let mut gauss = AnalyticDenoiser::new(AnalyticPrior::standard_normal());
        let same = deferred_render(&scene, &cam, &mut gauss, &Codec::Identity, &schedule, 0, 5, &opts, &mut rng).unwrap();
        assert_eq!(same, Image::from_rgb(16, 16, &plain.color));

        let target = Image::filled(16, 16, 3, 0.25);
        let mut delta = AnalyticDenoiser::new(AnalyticPrior::Delta {
            mean: Broadcast::Full(target.clone()),
        });
        let t = default_defer_level(&schedule);
        assert!(schedule.alpha_bar(t) >= 0.9 && schedule.alpha_bar(t + 1) < 0.9);
        let out = deferred_render(&scene, &cam, &mut delta, &Codec::Identity, &schedule, t, 5, &opts, &mut rng).unwrap();
        assert!(out.max_abs_diff(&target) < 1e-10);
    }
}
