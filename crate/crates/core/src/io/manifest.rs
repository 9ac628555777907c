//! Per-run provenance record.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_file;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub git_describe: String,
    pub config: BTreeMap<String, String>,
    pub loss_log: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    fn referenced(&self) -> impl Iterator<Item = &PathBuf> {
        self.loss_log.iter().chain(&self.checkpoints).chain(&self.outputs)
    }

    /// Writes the manifest as JSON after checking every referenced file exists.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(missing) = self.referenced().find(|p| !p.exists()) {
            return Err(Error::invalid(format!(
                "manifest references missing file {}",
                missing.display()
            )));
        }
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(path, text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_dangling_references() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("a.txt");
        let m = RunManifest {
            command: "render".into(),
            outputs: vec![out.clone()],
            ..Default::default()
        };
        assert!(m.write(&dir.path().join("manifest.json")).is_err());
        std::fs::write(&out, "x").unwrap();
        m.write(&dir.path().join("manifest.json")).unwrap();
        let back: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
