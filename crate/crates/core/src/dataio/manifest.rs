use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// One dataset entry. `path` is relative to the dataset directory on disk and
/// resolved to a full path by [`dataset_manifest`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub condition_tag: String,
}

impl ManifestEntry {
    /// Frame identifier used in detection files: the file stem.
    pub fn frame_id(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Loads `<dir>/manifest.json` in listed order, checking every path exists.
pub fn dataset_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath)
        .map_err(|e| Error::Load(format!("cannot read manifest {}: {e}", mpath.display())))?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text)
        .map_err(|e| Error::Load(format!("{}: {e}", mpath.display())))?;
    entries
        .into_iter()
        .map(|e| {
            let full = dir.join(&e.path);
            if !full.is_file() {
                return Err(Error::Load(format!(
                    "manifest references missing frame {}",
                    full.display()
                )));
            }
            Ok(ManifestEntry {
                path: full,
                condition_tag: e.condition_tag,
            })
        })
        .collect()
}

pub fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(entries)?;
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}
