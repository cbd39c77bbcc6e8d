//! Run manifests: which command produced which files, from which config and seed.

use std::fs;
use std::path::{Path, PathBuf};

use enn_core::datasets::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST_FORMAT: &str = "enn-run-manifest";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    /// Relative to the manifest's directory.
    pub path: String,
    /// `None` for files whose content is not reproducible (wall times).
    pub sha256: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub enn_cli: String,
    pub enn_core: String,
}

impl Versions {
    pub fn current() -> Self {
        Versions {
            enn_cli: env!("CARGO_PKG_VERSION").into(),
            enn_core: enn_core::VERSION.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub schema_version: u32,
    pub command: String,
    pub experiment: String,
    pub seed: u64,
    pub config_sha256: Option<String>,
    pub versions: Versions,
    pub inputs: Vec<FileRef>,
    pub outputs: Vec<FileRef>,
}

/// Collects the files a command writes into one directory, then writes the
/// manifest that lists them.
pub struct RunDir {
    dir: PathBuf,
    manifest: Manifest,
}

impl RunDir {
    pub fn create(dir: &Path, command: &str, experiment: &str, seed: u64, config_text: Option<&str>) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(RunDir {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                format: MANIFEST_FORMAT.into(),
                schema_version: MANIFEST_SCHEMA_VERSION,
                command: command.into(),
                experiment: experiment.into(),
                seed,
                config_sha256: config_text.map(|t| sha256_hex(t.as_bytes())),
                versions: Versions::current(),
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Record a file this run read. Files inside the run directory are
    /// recorded relative to it.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        let shown = path.strip_prefix(&self.dir).unwrap_or(path);
        self.manifest.inputs.push(FileRef {
            path: shown.display().to_string(),
            sha256: Some(sha256_hex(&bytes)),
        });
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        self.write_file(name, bytes, true)
    }

    /// Write a file whose content changes from run to run.
    pub fn write_volatile(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        self.write_file(name, bytes, false)
    }

    fn write_file(&mut self, name: &str, bytes: &[u8], hashed: bool) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.manifest.outputs.retain(|f| f.path != name);
        self.manifest.outputs.push(FileRef {
            path: name.into(),
            sha256: hashed.then(|| sha256_hex(bytes)),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
        self.write(name, text.as_bytes())
    }

    /// Write `<name>.manifest.json` and return the manifest.
    pub fn finish(self, name: &str) -> Result<Manifest> {
        let path = self.dir.join(format!("{name}.manifest.json"));
        let text = serde_json::to_string_pretty(&self.manifest).expect("serializable") + "\n";
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(self.manifest)
    }
}
