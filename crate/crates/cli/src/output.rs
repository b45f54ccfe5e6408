use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub const MANIFEST: &str = "manifest.json";
pub const VERSION_TAG: &str = concat!("cascade ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
}

/// Record of one command invocation, written after every other output.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub out_dir: String,
    pub config: BTreeMap<String, String>,
    pub files: Vec<FileEntry>,
}

/// Output directory that keeps an inventory of what it wrote.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let contents = contents.as_ref();
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: contents.len() as u64,
        });
        Ok(())
    }

    pub fn finish(
        self,
        command: &str,
        seed: u64,
        config: BTreeMap<String, String>,
    ) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: VERSION_TAG.to_string(),
            seed,
            out_dir: self.dir.display().to_string(),
            config,
            files: self.files,
        };
        let path = self.dir.join(MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(manifest)
    }
}
