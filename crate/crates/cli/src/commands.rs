//! One function per subcommand.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use ggds_core::bench::{measure_fps, synthetic_scene, REFERENCE_GPU_FPS, REFERENCE_GPU_ROWS};
use ggds_core::diffusion::{protocol, Codec, DiffusionSchedule, Endpoint, RemoteDenoiser, ScheduleKind};
use ggds_core::ggds::{default_defer_level, deferred_render, optimize, CameraPool, GgdsConfig, StepEvent};
use ggds_core::image::Image;
use ggds_core::io::{
    load_obj, load_pfm_env, load_ply, load_scene, save_obj, save_pfm, save_pfm_env, save_ply, save_scene,
    save_voxels, TrajectorySpec,
};
use ggds_core::layout::{
    extract_surface, generate_chunked, ChunkGenerator, ChunkOptions, DiffusionChunkSampler, ExtrudeOptions, Extruder,
    MapLayout,
};
use ggds_core::math::{Mat3, Vec3};
use ggds_core::raster::{render, Camera, RenderOptions};
use ggds_core::scene::{
    compose_and_relight, mesh_to_splats, EnvironmentMap, MeshToSplatsOptions, RelightConfig, RigidTransform,
    SceneModel, TriangleMesh,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::prior::{load_rgb, PriorSpec};
use crate::run::{create_dir, frame_name, parse_vec3, save_png, Run};
use crate::{BenchArgs, Cli, Command, ComposeArgs, ExportArgs, InitArgs, LayoutArgs, OptimizeArgs, RenderArgs, ServeArgs};

/// Separates the camera-pool stream from the optimizer's own stream.
const POOL_STREAM: u64 = 0x5EED_CA4E_2A00_0001;
const DEFERRED_STREAM: u64 = 0x5EED_DEFE_2000_0002;

pub fn dispatch(cli: &Cli, argv: Vec<String>) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let manifest = cli.manifest.as_deref();
    match &cli.command {
        Command::Layout(a) => layout(a, seed, manifest, argv),
        Command::Init(a) => init(a, seed, manifest, argv),
        Command::Optimize(a) => optimize_cmd(a, cli.seed, manifest, argv),
        Command::Render(a) => render_cmd(a, seed, manifest, argv),
        Command::Compose(a) => compose(a, seed, manifest, argv),
        Command::Export(a) => export(a, seed, manifest, argv),
        Command::Bench(a) => bench(a, seed, manifest, argv),
        Command::Serve(a) => serve(a, seed, manifest, argv),
    }
}

fn manifest_path(explicit: Option<&Path>, default: PathBuf) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or(default)
}

fn timeout(seconds: f64) -> Result<Duration> {
    Duration::try_from_secs_f64(seconds).with_context(|| format!("invalid timeout {seconds}"))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("{}: cannot read", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<GgdsConfig> {
    match path {
        Some(p) => GgdsConfig::parse(&read_text(p)?).with_context(|| format!("{}: invalid config", p.display())),
        None => Ok(GgdsConfig::shipped()?),
    }
}

fn layout(a: &LayoutArgs, seed: u64, manifest: Option<&Path>, argv: Vec<String>) -> Result<()> {
    let map = MapLayout::from_json(&read_text(&a.map)?).with_context(|| format!("{}: invalid map", a.map.display()))?;
    let opts = ChunkOptions {
        voxel_size: a.voxel,
        height: a.height,
        chunk_extent: a.chunk,
        overlap: a.overlap,
    };
    let mut generator: Box<dyn ChunkGenerator> = if a.generator == "extrude" {
        let options = if a.no_jitter {
            ExtrudeOptions::without_jitter()
        } else {
            ExtrudeOptions::default()
        };
        Box::new(Extruder { options })
    } else if let Some(ep) = a.generator.strip_prefix("bridge:") {
        let remote = RemoteDenoiser::connect(&Endpoint::parse(ep)?, timeout(a.timeout)?)?;
        let schedule = DiffusionSchedule::new(1000, ScheduleKind::default())?;
        Box::new(DiffusionChunkSampler::new(remote, schedule, a.sampler_steps))
    } else {
        bail!("unknown generator {:?}: expected extrude or bridge:<endpoint>", a.generator);
    };
    let chunked = generate_chunked(generator.as_mut(), &map, &opts, seed)?;
    let mesh: TriangleMesh<f32> = extract_surface(&chunked.grid, a.iso)?;

    create_dir(&a.out)?;
    let voxels = a.out.join("voxels.lsdv");
    let mesh_path = a.out.join("mesh.obj");
    save_voxels(&voxels, &chunked.grid)?;
    save_obj(&mesh_path, &mesh)?;
    println!(
        "{} chunks, {} occupied voxels, {} triangles",
        chunked.chunks.len(),
        chunked.grid.count_occupied(),
        mesh.faces.len()
    );

    let mut run = Run::new("layout", argv, seed);
    run.set("map", a.map.display());
    run.set("voxel_size", a.voxel);
    run.set("height", a.height);
    run.set("chunk_extent", a.chunk);
    run.set("overlap", a.overlap);
    run.set("generator", &a.generator);
    run.set("iso", a.iso);
    run.set("jitter", !a.no_jitter);
    run.output(voxels);
    run.output(mesh_path);
    run.finish(&manifest_path(manifest, a.out.join("manifest.json")))
}

fn init(a: &InitArgs, seed: u64, manifest: Option<&Path>, argv: Vec<String>) -> Result<()> {
    let mesh64 = load_obj(&a.mesh)?;
    let mesh = TriangleMesh {
        vertices: mesh64.vertices.iter().map(|v| v.cast::<f32>()).collect(),
        faces: mesh64.faces,
    };
    let env = match &a.env {
        Some(p) => load_pfm_env(p)?,
        None => EnvironmentMap::uniform(32, 16, parse_vec3(&a.sky).context("--sky")?),
    };
    let seeded = mesh_to_splats(
        &mesh,
        &MeshToSplatsOptions {
            scale_factor: a.scale_factor,
            opacity: a.opacity,
            sh_degree: a.sh_degree,
            max_face_area: a.max_face_area,
        },
    )?;
    let scene = SceneModel::new(seeded.splats, env, mesh)?.with_cap(a.cap)?;
    let files = save_scene(&a.out, &scene)?;
    println!("{} splats ({} degenerate faces skipped)", scene.len(), seeded.skipped);

    let mut run = Run::new("init", argv, seed);
    run.set("mesh", a.mesh.display());
    run.set("opacity", a.opacity);
    run.set("scale_factor", a.scale_factor);
    run.set("sh_degree", a.sh_degree);
    run.set("cap", a.cap);
    match &a.env {
        Some(p) => run.set("env", p.display()),
        None => run.set("sky", &a.sky),
    }
    for f in files.all() {
        run.output(f.clone());
    }
    run.finish(&manifest_path(manifest, a.out.join("manifest.json")))
}

fn camera_pool(a: &OptimizeArgs, scene: &SceneModel<f32>, seed: u64) -> Result<Vec<Camera<f32>>> {
    let mut cams = match &a.trajectory {
        Some(p) => TrajectorySpec::load(p)?.cameras::<f32>()?,
        None => Vec::new(),
    };
    if a.views > 0 {
        let Some((lo, hi)) = scene.bounds() else {
            bail!("{}: scene has no splats to place cameras around", a.scene.display());
        };
        let center = (lo + hi) * 0.5;
        let radius = (0.35 * (hi.x - lo.x).min(hi.y - lo.y) as f64).max(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ POOL_STREAM);
        let fov = (a.fov as f32).to_radians();
        let ground = CameraPool::jittered_ground(center, radius, a.views, fov, a.width, a.height, &mut rng)?;
        cams.extend((0..ground.len()).map(|i| ground.camera(i).clone()));
    }
    if cams.is_empty() {
        bail!("camera pool is empty: pass --trajectory or --views > 0");
    }
    Ok(cams)
}

fn optimize_cmd(a: &OptimizeArgs, seed: Option<u64>, manifest: Option<&Path>, argv: Vec<String>) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let mut cfg = load_config(a.config.as_deref())?;
    for o in &a.overrides {
        let Some((k, v)) = o.split_once('=') else {
            bail!("--set expects key=value, got {o:?}");
        };
        cfg.set(k.trim(), v.trim()).with_context(|| format!("--set {o}"))?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let spec = PriorSpec::parse(&a.prior)?;
    let schedule = cfg.build_schedule()?;
    let codec = cfg.codec();

    let cams = camera_pool(a, &scene, cfg.seed)?;
    let sizes: BTreeSet<(usize, usize)> = cams.iter().map(|c| (c.width, c.height)).collect();
    if matches!(spec, PriorSpec::Delta(_)) && sizes.len() > 1 {
        bail!("a delta prior needs one view resolution, the camera pool has {sizes:?}");
    }
    let (w, h) = (cams[0].width, cams[0].height);
    let mut denoiser = spec.build(&codec, w, h, timeout(a.timeout)?)?;
    let mut pool = CameraPool::new(cams)?;

    create_dir(&a.out)?;
    let loss_path = a.out.join("loss.csv");
    let mut log = BufWriter::new(File::create(&loss_path).with_context(|| format!("{}: cannot create", loss_path.display()))?);
    writeln!(
        log,
        "step,t,view,total,gen_l1,perceptual,normal,disparity,tv,distortion,normal_consistency,splats,skipped"
    )?;
    let mut checkpoints = Vec::new();
    let every = a.checkpoint_every;
    let progress = (cfg.steps / 10).max(1);
    let quiet = a.quiet;
    let out_dir = a.out.clone();
    let io_err = |path: &Path, source: std::io::Error| ggds_core::Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut on_step = |ev: &StepEvent<'_, f32>| -> ggds_core::Result<()> {
        let r = &ev.outcome.report;
        writeln!(
            log,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            ev.k,
            r.t,
            r.view,
            r.total,
            r.gen_l1,
            r.perceptual,
            r.normal,
            r.disparity,
            r.tv,
            r.distortion,
            r.normal_consistency,
            ev.scene.len(),
            ev.outcome.skipped
        )
        .map_err(|e| io_err(&loss_path, e))?;
        let done = ev.k + 1;
        if every > 0 && done % every == 0 {
            let dir = out_dir.join("checkpoints").join(format!("step_{done:06}"));
            save_scene(&dir, ev.scene)?;
            checkpoints.push(dir);
        }
        if !quiet && (done % progress == 0 || done == 1) {
            eprintln!("step {done}: loss {:.6}, t {}, {} splats", r.total, r.t, ev.scene.len());
        }
        Ok(())
    };
    let prompt = a.prompt.clone();
    let result = optimize(
        scene,
        &cfg,
        denoiser.as_mut(),
        &codec,
        &schedule,
        &mut pool,
        prompt,
        &mut on_step,
    )?;
    log.flush().map_err(|e| io_err(&a.out.join("loss.csv"), e))?;
    drop(log);

    let files = save_scene(&a.out, &result)?;
    println!("{} steps, {} splats", cfg.steps, result.len());

    let mut run = Run::new("optimize", argv, cfg.seed);
    run.extend(cfg.to_map());
    run.set("scene", a.scene.display());
    run.set("prior", &a.prior);
    run.set("views", a.views);
    run.set("view_width", a.width);
    run.set("view_height", a.height);
    run.set("view_fov_deg", a.fov);
    if let Some(t) = &a.trajectory {
        run.set("trajectory", t.display());
    }
    if let Some(p) = &a.prompt {
        run.set("prompt", p);
    }
    run.manifest.loss_log = Some(a.out.join("loss.csv"));
    run.manifest.checkpoints = checkpoints;
    for f in files.all() {
        run.output(f.clone());
    }
    run.finish(&manifest_path(manifest, a.out.join("manifest.json")))
}

struct Deferred {
    denoiser: Box<dyn ggds_core::diffusion::Denoiser<f32>>,
    codec: Codec,
    schedule: DiffusionSchedule,
    level: usize,
}

fn render_cmd(a: &RenderArgs, seed: u64, manifest: Option<&Path>, argv: Vec<String>) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let traj = TrajectorySpec::load(&a.trajectory)?;
    let cams = traj.cameras::<f32>()?;
    let opts = RenderOptions::default();
    let mut run = Run::new("render", argv, seed);
    run.set("scene", a.scene.display());
    run.set("trajectory", a.trajectory.display());
    run.set("deferred", a.deferred);

    let mut deferred = if a.deferred {
        let Some(prior) = &a.prior else {
            bail!("--deferred needs --prior");
        };
        let cfg = load_config(a.config.as_deref())?;
        let schedule = cfg.build_schedule()?;
        let codec = cfg.codec();
        let level = a.defer_level.unwrap_or_else(|| default_defer_level(&schedule));
        let denoiser = PriorSpec::parse(prior)?.build(&codec, cams[0].width, cams[0].height, timeout(a.timeout)?)?;
        run.set("prior", prior);
        run.set("defer_level", level);
        run.set("defer_steps", a.defer_steps);
        run.extend(cfg.to_map());
        Some(Deferred {
            denoiser,
            codec,
            schedule,
            level,
        })
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DEFERRED_STREAM);

    create_dir(&a.out)?;
    for (i, cam) in cams.iter().enumerate() {
        let buffers = render(&scene, cam, &opts)?;
        let img = match &mut deferred {
            Some(d) => deferred_render(
                &scene,
                cam,
                d.denoiser.as_mut(),
                &d.codec,
                &d.schedule,
                d.level,
                a.defer_steps,
                &opts,
                &mut rng,
            )?,
            None => Image::from_rgb(cam.width, cam.height, &buffers.color),
        };
        let path = a.out.join(frame_name("frame", i, cams.len(), "png"));
        save_png(&path, &img)?;
        run.output(path);
        if a.disparity {
            let path = a.out.join(frame_name("disparity", i, cams.len(), "pfm"));
            let disp = Image::from_vec(cam.width, cam.height, 1, buffers.disparity.clone())?;
            save_pfm(&path, &disp)?;
            run.output(path);
        }
    }
    println!("{} frames written to {}", cams.len(), a.out.display());
    run.finish(&manifest_path(manifest, a.out.join("manifest.json")))
}

fn compose(a: &ComposeArgs, seed: u64, manifest: Option<&Path>, argv: Vec<String>) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let asset = if a.asset.is_dir() {
        load_scene(&a.asset)?.splats
    } else {
        load_ply(&a.asset)?.0
    };
    let transform = RigidTransform {
        rotation: Mat3::rotation(Vec3::unit_z(), a.yaw.to_radians()),
        translation: parse_vec3(&a.translate).context("--translate")?,
        scale: a.scale,
    };
    let relight = RelightConfig {
        enabled: a.relight,
        ..RelightConfig::default()
    };
    let out = compose_and_relight(&scene, &asset, &transform, &relight)?;
    let files = save_scene(&a.out, &out)?;
    println!("{} scene splats + {} asset splats", scene.len(), asset.len());

    let mut run = Run::new("compose", argv, seed);
    run.set("scene", a.scene.display());
    run.set("asset", a.asset.display());
    run.set("translate", &a.translate);
    run.set("yaw_deg", a.yaw);
    run.set("scale", a.scale);
    run.set("relight", a.relight);
    for f in files.all() {
        run.output(f.clone());
    }
    run.finish(&manifest_path(manifest, a.out.join("manifest.json")))
}

fn export(a: &ExportArgs, seed: u64, manifest: Option<&Path>, argv: Vec<String>) -> Result<()> {
    let ext = a
        .out
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    if !matches!(ext.as_str(), "ply" | "obj" | "pfm") {
        bail!("{}: export format must be .ply, .obj or .pfm", a.out.display());
    }
    let scene = load_scene(&a.scene)?;
    match ext.as_str() {
        "ply" => save_ply(&a.out, &scene.splats, scene.sh_degree)?,
        "obj" => save_obj(&a.out, &scene.proxy)?,
        _ => save_pfm_env(&a.out, &scene.env)?,
    }
    let mut run = Run::new("export", argv, seed);
    run.set("scene", a.scene.display());
    run.set("format", &ext);
    run.output(a.out.clone());
    let default = PathBuf::from(format!("{}.manifest.json", a.out.display()));
    run.finish(&manifest_path(manifest, default))
}

fn bench(a: &BenchArgs, seed: u64, manifest: Option<&Path>, argv: Vec<String>) -> Result<()> {
    let (scene, cam) = synthetic_scene(a.splats, a.width, a.height, seed)?;
    let r = measure_fps(&scene, &cam, &RenderOptions::default(), a.frames, a.threads)?;
    println!(
        "{}x{}, {} splats, {} thread(s): {:.2} fps (median of {} frames, {:.2} s total)",
        a.width, a.height, a.splats, r.threads, r.fps, r.frames, r.seconds
    );
    println!(
        "context: the reference GPU implementation reports {REFERENCE_GPU_FPS} fps at {REFERENCE_GPU_ROWS} rows; \
         this CPU figure is not directly comparable"
    );
    let mut run = Run::new("bench", argv, seed);
    run.set("splats", a.splats);
    run.set("width", a.width);
    run.set("height", a.height);
    run.set("frames", a.frames);
    run.set("threads", a.threads);
    run.set("fps", format!("{:.4}", r.fps));
    run.set("reference_gpu_fps", REFERENCE_GPU_FPS);
    run.set("reference_gpu_rows", REFERENCE_GPU_ROWS);
    run.finish(&manifest_path(manifest, PathBuf::from("bench.manifest.json")))
}

fn serve(a: &ServeArgs, seed: u64, manifest: Option<&Path>, argv: Vec<String>) -> Result<()> {
    let spec = PriorSpec::parse(&a.prior)?;
    let (w, h) = match &spec {
        PriorSpec::Bridge(_) => bail!("serve answers with a builtin prior, not {:?}", a.prior),
        PriorSpec::Delta(p) => {
            let img = load_rgb(p)?;
            (img.width, img.height)
        }
        PriorSpec::Gaussian { .. } => (1, 1),
    };
    let mut denoiser = spec.build(&Codec::Identity, w, h, Duration::from_secs(1))?;
    if let Some(path) = manifest {
        let mut run = Run::new("serve", argv, seed);
        run.set("listen", &a.listen);
        run.set("prior", &a.prior);
        run.finish(path)?;
    }
    if a.listen == "stdio" {
        let n = protocol::serve(std::io::stdin().lock(), std::io::stdout().lock(), denoiser.as_mut())?;
        eprintln!("answered {n} frames");
        return Ok(());
    }
    let listener = TcpListener::bind(&a.listen).with_context(|| format!("cannot listen on {}", a.listen))?;
    println!("listening on {}", listener.local_addr()?);
    std::io::stdout().flush()?;
    for stream in listener.incoming() {
        let stream = stream?;
        let reader = stream.try_clone()?;
        match protocol::serve(reader, stream, denoiser.as_mut()) {
            Ok(n) => eprintln!("connection closed after {n} frames"),
            Err(e) => eprintln!("connection dropped: {e}"),
        }
        if a.once {
            break;
        }
    }
    Ok(())
}
