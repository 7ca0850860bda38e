use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::args::Cli;

/// Everything needed to rerun a command: the fully resolved arguments,
/// seed and tool version.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub command: &'static str,
    pub tool_version: &'static str,
    pub seed: u64,
    pub arguments: &'a Cli,
}

impl<'a> RunManifest<'a> {
    pub fn new(cli: &'a Cli) -> Self {
        RunManifest {
            command: cli.command.name(),
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: cli.global.seed,
            arguments: cli,
        }
    }
}

/// Tracks files written by a run so a failed run leaves nothing behind.
pub struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        let created_dir = !dir.exists();
        std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
            committed: false,
        })
    }

    /// Registers `name` inside the output directory and returns its path.
    pub fn file(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_manifest(&mut self, manifest: &RunManifest<'_>) -> anyhow::Result<()> {
        let path = self.file("manifest.json");
        let json = serde_json::to_string_pretty(manifest)?;
        std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        if self.created_dir {
            let _ = std::fs::remove_dir_all(&self.dir);
        }
    }
}
