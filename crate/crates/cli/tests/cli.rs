//! End-to-end runs of the `ggds` binary.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use ggds_core::io::{load_scene, load_voxels, RunManifest, TrajectorySpec, VOXEL_MAGIC};
use ggds_core::layout::{Building, MapLayout, Road};

fn ggds() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ggds"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    ggds().current_dir(dir).args(args).output().expect("spawn ggds")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "ggds {args:?} failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn manifest(path: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_manifest_files_exist(dir: &Path, m: &RunManifest) {
    for p in m.loss_log.iter().chain(&m.checkpoints).chain(&m.outputs) {
        assert!(dir.join(p).exists(), "{} listed in manifest but missing", p.display());
    }
}

/// 8 m × 8 m block: one road along x and one 4 m building.
fn write_small_map(dir: &Path) -> PathBuf {
    let map = MapLayout {
        roads: vec![Road {
            points: vec![[0.0, 2.0], [8.0, 2.0]],
            width: 2.5,
        }],
        buildings: vec![Building {
            polygon: vec![[2.0, 5.0], [6.0, 5.0], [6.0, 7.5], [2.0, 7.5]],
            height: 4.0,
        }],
        extent: [0.0, 0.0, 8.0, 8.0],
    };
    let path = dir.join("map.json");
    std::fs::write(&path, map.to_json()).unwrap();
    path
}

fn write_trajectory(dir: &Path, frames: usize) -> PathBuf {
    let t = TrajectorySpec::straight_drive([0.5, 2.0, 1.6], 0.5, frames, 60.0, 32, 24);
    let path = dir.join("traj.json");
    std::fs::write(&path, t.to_json()).unwrap();
    path
}

/// layout → init in `dir`, with relative paths.
fn prepare_scene(dir: &Path) {
    write_small_map(dir);
    ok(dir, &["--seed", "3", "layout", "--map", "map.json", "--out", "layout", "--height", "6", "--voxel", "0.5"]);
    ok(dir, &["--seed", "3", "init", "--mesh", "layout/mesh.obj", "--out", "init"]);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = ggds().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn missing_arguments_are_usage_errors() {
    assert_eq!(ggds().output().unwrap().status.code(), Some(2));
    assert_eq!(ggds().args(["render", "--scene", "x"]).output().unwrap().status.code(), Some(2));
}

#[test]
fn missing_input_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere").join("mesh.obj");
    let out = ggds()
        .args(["init", "--mesh", missing.to_str().unwrap(), "--out"])
        .arg(dir.path().join("scene"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(missing.to_str().unwrap()), "{err}");

    let scene = dir.path().join("no-scene");
    let out = ggds()
        .args(["export", "--scene", scene.to_str().unwrap(), "--out"])
        .arg(dir.path().join("x.ply"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(scene.to_str().unwrap()));
}

#[test]
fn bad_prior_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    prepare_scene(dir.path());
    let out = run_in(
        dir.path(),
        &["optimize", "--scene", "init", "--out", "opt", "--prior", "builtin:nothing"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown prior"));
}

#[test]
fn smoke_pipeline_writes_every_declared_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare_scene(dir);
    write_trajectory(dir, 5);

    let lm = manifest(&dir.join("layout/manifest.json"));
    assert_eq!(lm.command, "layout");
    assert_eq!(lm.seed, 3);
    assert_manifest_files_exist(dir, &lm);
    let bytes = std::fs::read(dir.join("layout/voxels.lsdv")).unwrap();
    assert_eq!(&bytes[..4], VOXEL_MAGIC);
    assert!(load_voxels(&dir.join("layout/voxels.lsdv")).unwrap().count_occupied() > 0);

    let init = load_scene(&dir.join("init")).unwrap();
    assert!(!init.is_empty());
    assert!(!init.proxy.is_empty());

    ok(
        dir,
        &[
            "--seed", "5", "optimize", "--scene", "init", "--out", "opt", "--prior", "builtin:gaussian",
            "--set", "steps=200", "--set", "densify_every=50", "--set", "densify_until=150",
            "--views", "4", "--width", "32", "--height", "24", "--trajectory", "traj.json",
            "--checkpoint-every", "100", "--quiet",
        ],
    );
    let om = manifest(&dir.join("opt/manifest.json"));
    assert_eq!(om.seed, 5);
    assert_eq!(om.config["steps"], "200");
    assert_eq!(om.checkpoints.len(), 2);
    assert_manifest_files_exist(dir, &om);
    let log = std::fs::read_to_string(dir.join("opt/loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 201);
    let optimized = load_scene(&dir.join("opt")).unwrap();
    assert!(!optimized.is_empty());

    ok(dir, &["render", "--scene", "opt", "--trajectory", "traj.json", "--out", "frames", "--disparity"]);
    let rm = manifest(&dir.join("frames/manifest.json"));
    assert_manifest_files_exist(dir, &rm);
    for i in 0..5 {
        let frame = dir.join(format!("frames/frame_{i:05}.png"));
        let img = image::open(&frame).unwrap();
        assert_eq!((img.width(), img.height()), (32, 24));
        assert!(dir.join(format!("frames/disparity_{i:05}.pfm")).exists());
    }
    let pngs = std::fs::read_dir(dir.join("frames"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 5);

    ok(
        dir,
        &[
            "render", "--scene", "opt", "--trajectory", "traj.json", "--out", "deferred", "--deferred", "--prior",
            "builtin:gaussian",
        ],
    );
    assert!(dir.join("deferred/frame_00004.png").exists());

    ok(
        dir,
        &["compose", "--scene", "opt", "--asset", "init", "--out", "composed", "--translate", "0,0,0.5", "--yaw", "30", "--relight"],
    );
    let composed = load_scene(&dir.join("composed")).unwrap();
    assert_eq!(composed.len(), optimized.len() + init.len());
    assert_manifest_files_exist(dir, &manifest(&dir.join("composed/manifest.json")));

    for name in ["splats.ply", "proxy.obj", "env.pfm"] {
        ok(dir, &["export", "--scene", "composed", "--out", &format!("export/{name}")]);
        assert!(dir.join("export").join(name).exists());
        let m = manifest(&dir.join(format!("export/{name}.manifest.json")));
        assert_manifest_files_exist(dir, &m);
    }
    let (splats, _) = ggds_core::io::load_ply(&dir.join("export/splats.ply")).unwrap();
    assert_eq!(splats, composed.splats);
}

#[test]
fn identical_argv_and_seed_give_identical_exports() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "--seed", "11", "optimize", "--scene", "init", "--out", "opt", "--prior", "builtin:gaussian", "--set",
        "steps=60", "--views", "3", "--width", "24", "--height", "24", "--quiet",
    ];
    for dir in [a.path(), b.path()] {
        prepare_scene(dir);
        ok(dir, &args);
        ok(dir, &["export", "--scene", "opt", "--out", "splats.ply"]);
    }
    for f in ["opt/scene.json", "opt/splats.ply", "opt/env.pfm", "opt/proxy.obj", "opt/loss.csv", "splats.ply"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
    // A different seed changes the result.
    let c = tempfile::tempdir().unwrap();
    prepare_scene(c.path());
    let mut other = args;
    other[1] = "12";
    ok(c.path(), &other);
    let x = std::fs::read(a.path().join("opt/splats.ply")).unwrap();
    let z = std::fs::read(c.path().join("opt/splats.ply")).unwrap();
    assert_ne!(x, z);
}

fn spawn_server(extra: &[&str]) -> (std::process::Child, String) {
    let mut child = ggds()
        .args(["serve", "--listen", "127.0.0.1:0", "--once"])
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    (child, addr)
}

#[test]
fn bridge_priors_match_the_builtin_prior() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare_scene(dir);
    let common = [
        "--seed", "2", "optimize", "--scene", "init", "--set", "steps=20", "--views", "2", "--width", "16",
        "--height", "16", "--quiet", "--prior",
    ];
    let run = |prior: &str, out: &str| {
        let mut args: Vec<&str> = common.to_vec();
        args.extend([prior, "--out", out]);
        ok(dir, &args);
    };
    run("builtin:gaussian", "builtin");

    let (mut server, addr) = spawn_server(&["--prior", "builtin:gaussian"]);
    run(&format!("bridge:{addr}"), "tcp");
    assert!(server.wait().unwrap().success());

    let stdio = format!("bridge:stdio:{} serve --listen stdio", env!("CARGO_BIN_EXE_ggds"));
    run(&stdio, "stdio");

    let want = std::fs::read(dir.join("builtin/splats.ply")).unwrap();
    for out in ["tcp", "stdio"] {
        let got = std::fs::read(dir.join(out).join("splats.ply")).unwrap();
        assert!(got == want, "{out} bridge result differs from the builtin prior");
    }
}

#[test]
fn unreachable_bridge_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare_scene(dir);
    // Bind then drop to get a port with nobody listening.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let prior = format!("bridge:127.0.0.1:{port}");
    let out = run_in(
        dir,
        &["optimize", "--scene", "init", "--out", "opt", "--prior", &prior, "--timeout", "2"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&format!("127.0.0.1:{port}")));
}

#[test]
fn bench_reports_fps_with_reference_context() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(
        tmp.path(),
        &["bench", "--splats", "2000", "--width", "64", "--height", "64", "--frames", "3"],
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("fps"), "{text}");
    assert!(text.contains("60 fps at 960 rows"), "{text}");
    let m = manifest(&tmp.path().join("bench.manifest.json"));
    assert!(m.config["fps"].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn optimize_help_documents_config_keys() {
    let out = ggds().args(["optimize", "--help"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["lambda_disp", "t_max", "densify_every", "preconditioner"] {
        assert!(text.contains(key), "{key} missing from help");
    }
}
