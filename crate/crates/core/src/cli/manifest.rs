//! Run directories and their manifests.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Everything needed to reproduce a run: inputs, every effective
/// parameter, seeds, and a digest of each artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub inputs: Vec<PathBuf>,
    pub parameters: serde_json::Value,
    pub seeds: Vec<u64>,
    /// `streaming`, or `in_memory` when the subcommand loads whole tables.
    pub mode: String,
    pub workers: usize,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<RunManifest> {
        let path = dir.join(MANIFEST_FILE);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// A flat output directory that remembers which artifacts it wrote.
pub struct RunDir {
    dir: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(dir: &Path) -> Result<RunDir> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(RunDir {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Opens artifact `name` for writing and records it.
    pub fn file(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.record(name);
        Ok(BufWriter::new(file))
    }

    /// Records an artifact written by someone else.
    pub fn record(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    /// Flushes `w` and surfaces write errors against the artifact path.
    pub fn close(&self, name: &str, w: BufWriter<File>) -> Result<()> {
        let path = self.dir.join(name);
        w.into_inner()
            .map_err(|e| Error::io(&path, e.into_error()))?
            .sync_all()
            .map_err(|e| Error::io(&path, e))
    }

    /// Digests every artifact and writes `manifest.json`.
    pub fn finish(mut self, mut manifest: RunManifest) -> Result<RunManifest> {
        self.files.sort();
        manifest.outputs = self
            .files
            .iter()
            .map(|name| digest(&self.dir.join(name)).map(|(bytes, sha256)| OutputFile {
                file: name.clone(),
                bytes,
                sha256,
            }))
            .collect::<Result<_>>()?;
        let path = self.dir.join(MANIFEST_FILE);
        let mut out = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        serde_json::to_writer_pretty(&mut out, &manifest)?;
        out.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        out.flush().map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

/// Size and hex SHA-256 of a file.
pub fn digest(path: &Path) -> Result<(u64, String)> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok((bytes, hex::encode(hasher.finalize())))
}
