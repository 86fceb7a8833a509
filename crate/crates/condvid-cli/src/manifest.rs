//! Run directories and the manifest that makes each run replayable.

use std::path::{Path, PathBuf};

use chrono::Local;
use condvid::datasets::SplitSpec;
use condvid::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to resume or exactly replay a run on the same device.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub profile: String,
    pub seed: u64,
    pub config_path: PathBuf,
    pub corpus_dir: PathBuf,
    pub split: SplitSpec,
    #[serde(default)]
    pub checkpoints: Vec<PathBuf>,
    #[serde(default)]
    pub metrics_path: Option<PathBuf>,
}

impl RunManifest {
    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("manifest serialization: {e}")))?;
        std::fs::write(run_dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }

    pub fn latest_checkpoint(&self) -> Result<&Path> {
        self.checkpoints
            .last()
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::data("manifest lists no checkpoints; train first"))
    }
}

/// Resolves the run directory: an explicit `--out` is used as-is, otherwise a
/// fresh timestamp+seed directory is created under the output root.
pub fn create_run_dir(out: Option<&Path>, root: &Path, kind: &str, seed: u64) -> Result<PathBuf> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        return Ok(dir.to_path_buf());
    }
    let stamp = Local::now().format("%Y%m%d-%H%M%S");
    let base = root.join(format!("{stamp}-{kind}-seed{seed}"));
    let mut dir = base.clone();
    let mut n = 1;
    while dir.exists() {
        n += 1;
        dir = PathBuf::from(format!("{}-{n}", base.display()));
    }
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
