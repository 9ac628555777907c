//! Shared plumbing: manifests, frame files and small argument parsers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{bail, Context, Result};
use ggds_core::image::Image;
use ggds_core::io::RunManifest;
use ggds_core::math::Vec3;

/// `git describe` of the source tree this binary was built from.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["-C", env!("CARGO_MANIFEST_DIR"), "describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

/// Manifest under construction for one command.
pub struct Run {
    pub manifest: RunManifest,
}

impl Run {
    pub fn new(command: &str, argv: Vec<String>, seed: u64) -> Self {
        Self {
            manifest: RunManifest {
                command: command.into(),
                argv,
                seed,
                git_describe: git_describe(),
                ..Default::default()
            },
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.manifest.config.insert(key.into(), value.to_string());
    }

    pub fn extend(&mut self, map: BTreeMap<String, String>) {
        self.manifest.config.extend(map);
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.manifest.outputs.push(path.into());
    }

    pub fn finish(&self, path: &Path) -> Result<()> {
        self.manifest
            .write(path)
            .with_context(|| format!("writing manifest {}", path.display()))
    }
}

/// `prefix_NNNNN.ext`, zero-padded to at least five digits.
pub fn frame_name(prefix: &str, index: usize, count: usize, ext: &str) -> String {
    let digits = count.saturating_sub(1).to_string().len().max(5);
    format!("{prefix}_{index:0digits$}.{ext}")
}

/// Writes an RGB image with values clamped to `[0, 1]` as 8-bit PNG.
pub fn save_png(path: &Path, img: &Image<f32>) -> Result<()> {
    if img.channels != 3 {
        bail!("{}: PNG output needs 3 channels, image has {}", path.display(), img.channels);
    }
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .context("image buffer size mismatch")?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .with_context(|| format!("{}: cannot write PNG", path.display()))
}

pub fn parse_vec3(s: &str) -> Result<Vec3<f32>> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [x, y, z] = parts[..] else {
        bail!("expected x,y,z, got {s:?}");
    };
    let v = Vec3::new(
        x.parse().with_context(|| format!("bad number in {s:?}"))?,
        y.parse().with_context(|| format!("bad number in {s:?}"))?,
        z.parse().with_context(|| format!("bad number in {s:?}"))?,
    );
    if !v.is_finite() {
        bail!("non-finite value in {s:?}");
    }
    Ok(v)
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("{}: cannot create directory", dir.display()))
}
