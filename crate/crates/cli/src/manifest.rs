use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

/// Provenance of one artifact-producing command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name; enough to repeat the run.
    pub args: Vec<String>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(args: &[String], config: Option<&Path>, seed: Option<u64>) -> Self {
        Self {
            command: args.first().cloned().unwrap_or_default(),
            args: args.to_vec(),
            config: config.map(Path::to_path_buf),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: format!("{} ({})", env!("CARGO_PKG_VERSION"), env!("SFUS_GIT_DESCRIBE")),
            started_unix_s: now(),
            finished_unix_s: 0,
        }
    }

    pub fn input(mut self, p: &Path) -> Self {
        self.inputs.push(p.to_path_buf());
        self
    }

    /// Stamps the finish time and writes the manifest to `path`.
    pub fn finish(mut self, outputs: &[PathBuf], path: &Path) -> sleepfuse::Result<()> {
        self.outputs = outputs.to_vec();
        self.finished_unix_s = now();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> sleepfuse::Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Manifest location for a file output (`x.json` → `x.manifest.json`) or a
/// directory output (`dir/manifest.json`).
pub fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("manifest.json")
    } else {
        out.with_extension("manifest.json")
    }
}
