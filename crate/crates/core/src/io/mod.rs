//! Persistence formats, run manifests and image metrics.

mod manifest;
mod metrics;
mod obj;
mod pfm;
mod ply;
mod scene_dir;
mod trajectory;
mod voxels;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use manifest::RunManifest;
pub use metrics::{mean_angular_error, mse, psnr, PSNR_CAP_DB};
pub use obj::{load_obj, read_obj, save_obj, write_obj};
pub use pfm::{load_pfm, load_pfm_env, read_pfm, save_pfm, save_pfm_env, write_pfm};
pub use ply::{load_ply, read_ply, save_ply, write_ply};
pub use scene_dir::{load_scene, save_scene, SceneFiles};
pub use trajectory::{Pose, PoseOrientation, TrajectorySpec};
pub use voxels::{load_voxels, read_voxels, save_voxels, write_voxels, VOXEL_MAGIC, VOXEL_VERSION};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected magic {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: unsupported format version {found}")]
    UnsupportedVersion { path: PathBuf, found: String },
    #[error("{path}: file is truncated ({detail})")]
    Truncated { path: PathBuf, detail: String },
    #[error("{path}: property mismatch ({detail})")]
    PropertyMismatch { path: PathBuf, detail: String },
    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },
}

impl LoadError {
    pub fn path(&self) -> &Path {
        match self {
            LoadError::Io { path, .. }
            | LoadError::BadMagic { path, .. }
            | LoadError::UnsupportedVersion { path, .. }
            | LoadError::Truncated { path, .. }
            | LoadError::PropertyMismatch { path, .. }
            | LoadError::Parse { path, .. } => path,
        }
    }

    /// Re-targets an error produced while parsing an in-memory stream.
    pub(crate) fn at(self, p: &Path) -> Self {
        let path = p.to_path_buf();
        match self {
            LoadError::Io { source, .. } => LoadError::Io { path, source },
            LoadError::BadMagic { expected, found, .. } => LoadError::BadMagic { path, expected, found },
            LoadError::UnsupportedVersion { found, .. } => LoadError::UnsupportedVersion { path, found },
            LoadError::Truncated { detail, .. } => LoadError::Truncated { path, detail },
            LoadError::PropertyMismatch { detail, .. } => LoadError::PropertyMismatch { path, detail },
            LoadError::Parse { detail, .. } => LoadError::Parse { path, detail },
        }
    }
}

pub(crate) fn stream_path() -> PathBuf {
    PathBuf::from("<stream>")
}

pub(crate) fn parse_err(detail: impl Into<String>) -> LoadError {
    LoadError::Parse {
        path: stream_path(),
        detail: detail.into(),
    }
}

pub(crate) fn truncated(detail: impl Into<String>) -> LoadError {
    LoadError::Truncated {
        path: stream_path(),
        detail: detail.into(),
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, LoadError> {
    std::fs::read(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> crate::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| crate::Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, bytes).map_err(|source| crate::Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Little-endian reader over a byte slice that reports truncation.
pub(crate) struct Bytes<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Bytes<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], LoadError> {
        if self.remaining() < n {
            return Err(truncated(format!("reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8, LoadError> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32, LoadError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32, LoadError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64, LoadError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}
