//! A scene as a directory of self-describing files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::{load_obj, load_pfm_env, load_ply, read_file, save_obj, save_pfm_env, save_ply, write_file, LoadError};
use crate::real::Real;
use crate::scene::{EnvSampling, SceneModel, TriangleMesh};

const FORMAT: &str = "ggds-scene";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SceneHeader {
    format: String,
    version: u32,
    sh_degree: usize,
    splat_count: usize,
    cap: usize,
    env_sampling: EnvSampling,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

/// Paths of the files making up a scene directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneFiles {
    pub header: PathBuf,
    pub splats: PathBuf,
    pub env: PathBuf,
    pub proxy: PathBuf,
}

impl SceneFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            header: dir.join("scene.json"),
            splats: dir.join("splats.ply"),
            env: dir.join("env.pfm"),
            proxy: dir.join("proxy.obj"),
        }
    }

    pub fn all(&self) -> [&PathBuf; 4] {
        [&self.header, &self.splats, &self.env, &self.proxy]
    }
}

pub fn save_scene<T: Real>(dir: &Path, scene: &SceneModel<T>) -> Result<SceneFiles> {
    let files = SceneFiles::in_dir(dir);
    save_ply(&files.splats, &scene.splats, scene.sh_degree)?;
    save_pfm_env(&files.env, &scene.env)?;
    save_obj(&files.proxy, &scene.proxy)?;
    let header = SceneHeader {
        format: FORMAT.into(),
        version: VERSION,
        sh_degree: scene.sh_degree,
        splat_count: scene.splats.len(),
        cap: scene.cap,
        env_sampling: scene.env.sampling,
        metadata: scene.metadata.clone(),
    };
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    write_file(&files.header, text.as_bytes())?;
    Ok(files)
}

pub fn load_scene(dir: &Path) -> Result<SceneModel<f32>> {
    let files = SceneFiles::in_dir(dir);
    let bytes = read_file(&files.header)?;
    let header: SceneHeader = serde_json::from_slice(&bytes).map_err(|e| LoadError::Parse {
        path: files.header.clone(),
        detail: e.to_string(),
    })?;
    if header.format != FORMAT {
        return Err(LoadError::BadMagic {
            path: files.header.clone(),
            expected: FORMAT.into(),
            found: header.format,
        }
        .into());
    }
    if header.version != VERSION {
        return Err(LoadError::UnsupportedVersion {
            path: files.header.clone(),
            found: header.version.to_string(),
        }
        .into());
    }
    let (splats, degree) = load_ply(&files.splats)?;
    let mismatch = |detail: String| LoadError::PropertyMismatch {
        path: files.splats.clone(),
        detail,
    };
    if splats.len() != header.splat_count {
        return Err(mismatch(format!("{} splats, header says {}", splats.len(), header.splat_count)).into());
    }
    if !splats.is_empty() && degree != header.sh_degree {
        return Err(mismatch(format!("SH degree {degree}, header says {}", header.sh_degree)).into());
    }
    let env = load_pfm_env(&files.env)?.with_sampling(header.env_sampling);
    let proxy64 = load_obj(&files.proxy)?;
    let proxy = TriangleMesh {
        vertices: proxy64.vertices.iter().map(|v| v.cast()).collect(),
        faces: proxy64.faces,
    };
    let scene = SceneModel {
        splats,
        sh_degree: header.sh_degree,
        env,
        proxy,
        cap: header.cap,
        metadata: header.metadata,
    };
    scene.validate()?;
    Ok(scene)
}
