//! Output directories and the manifest that makes a run replayable.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::Command;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce and verify one invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub args: Vec<String>,
    pub command: Command,
    pub seed: u64,
    pub config: Config,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub wall_time_seconds: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> anyhow::Result<RunManifest> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid manifest {}", path.display()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> anyhow::Result<FileDigest> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Collects the files written by one command.
pub struct OutputDir {
    pub root: PathBuf,
    /// Outermost directory this run created, if any.
    created: Option<PathBuf>,
    written: Vec<FileDigest>,
}

impl OutputDir {
    /// Creates `root`, refusing a directory that already holds files.
    pub fn create(root: PathBuf) -> anyhow::Result<OutputDir> {
        if root.exists() && fs::read_dir(&root)?.next().is_some() {
            anyhow::bail!("output directory {} is not empty", root.display());
        }
        let created = root
            .ancestors()
            .take_while(|p| !p.as_os_str().is_empty() && !p.exists())
            .last()
            .map(Path::to_path_buf);
        fs::create_dir_all(&root).with_context(|| format!("cannot create {}", root.display()))?;
        Ok(OutputDir {
            root,
            created,
            written: Vec::new(),
        })
    }

    /// Removes partial output after a failed command.
    pub fn discard(self) {
        match &self.created {
            Some(top) => {
                let _ = fs::remove_dir_all(top);
            }
            None => {
                for f in &self.written {
                    let _ = fs::remove_file(self.root.join(&f.path));
                }
            }
        }
    }

    pub fn write(&mut self, relative: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.root.join(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        self.written.push(FileDigest {
            path: relative.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    /// Pretty JSON with the effective config embedded next to the result.
    pub fn write_json<T: Serialize>(&mut self, relative: &str, config: &Config, result: &T) -> anyhow::Result<()> {
        #[derive(Serialize)]
        struct Echo<'a, T> {
            config: &'a Config,
            result: &'a T,
        }
        let mut text = serde_json::to_string_pretty(&Echo { config, result })?;
        text.push('\n');
        self.write(relative, text.as_bytes())
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> anyhow::Result<RunManifest> {
        self.written.sort_by(|a, b| a.path.cmp(&b.path));
        manifest.outputs = self.written;
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(self.root.join(MANIFEST), text + "\n")?;
        Ok(manifest)
    }
}
