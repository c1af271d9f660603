//! Run directories: resolved config, output files and a manifest that lists
//! every file with its size and digest. Nothing time-dependent is written.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use swarm_core::seed::fnv1a;

use crate::config::RunConfig;
use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub fnv1a: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config: &'static str,
    /// Extra arguments needed to repeat the run, in command-line form.
    pub args: Vec<String>,
    pub files: Vec<FileEntry>,
}

/// Output directory of one run. Files are recorded in write order.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    command: String,
    seed: u64,
    args: Vec<String>,
    files: Vec<String>,
}

impl RunDir {
    /// Creates the directory and writes the resolved config.
    pub fn create(cfg: &RunConfig, command: &str, args: Vec<String>) -> Result<Self, CliError> {
        let root = cfg.out_dir.clone();
        std::fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        let mut dir = RunDir {
            root,
            command: command.to_string(),
            seed: cfg.seed,
            args,
            files: Vec::new(),
        };
        dir.write_bytes(CONFIG_FILE, cfg.to_toml().as_bytes())?;
        dir.files.clear();
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn record(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.record(name);
        Ok(path)
    }

    /// One JSON value per line.
    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for row in rows {
            serde_json::to_writer(&mut w, &row)?;
            w.write_all(b"\n").map_err(|e| CliError::io(&path, e))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.record(name);
        Ok(path)
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.record(name);
        Ok(path)
    }

    /// Registers a file written by other code (e.g. a checkpoint).
    pub fn adopt(&mut self, name: &str) {
        self.record(name);
    }

    /// Writes the manifest. Call last.
    pub fn finish(self) -> Result<Manifest, CliError> {
        let mut entries = Vec::new();
        for name in std::iter::once(CONFIG_FILE.to_string()).chain(self.files.iter().cloned()) {
            let path = self.path(&name);
            let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            entries.push(FileEntry {
                name,
                bytes: bytes.len() as u64,
                fnv1a: format!("{:016x}", fnv1a(&bytes)),
            });
        }
        let manifest = Manifest {
            tool: "swarm",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seed: self.seed,
            config: CONFIG_FILE,
            args: self.args,
            files: entries,
        };
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}
