//! Output directory bookkeeping: CSV and JSON writers that record what they
//! wrote, and the run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn open(&mut self, rel: &str) -> Result<BufWriter<File>> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.files.push(rel.to_string());
        Ok(BufWriter::new(f))
    }

    /// CSV with `#` comment lines naming the quantity and its units, then a
    /// header row and `rows`.
    pub fn csv<R: Serialize>(
        &mut self,
        rel: &str,
        comments: &[&str],
        header: &[&str],
        rows: impl IntoIterator<Item = R>,
    ) -> Result<()> {
        let mut w = self.open(rel)?;
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        let mut cw = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        cw.write_record(header)?;
        for r in rows {
            cw.serialize(r)?;
        }
        cw.flush()?;
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut w = self.open(rel)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// Sizes and hashes of everything written so far, in write order.
    pub fn inventory(&self) -> Result<Vec<FileEntry>> {
        self.files
            .iter()
            .map(|rel| {
                let bytes = fs::read(self.root.join(rel))?;
                Ok(FileEntry {
                    path: rel.clone(),
                    bytes: bytes.len() as u64,
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect()
    }
}

/// Streams used by one replica; with the master seed they reproduce it alone.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicaSeed {
    pub n: usize,
    pub replica: usize,
    pub replica_id: u64,
    pub initial_stream: u64,
    pub dynamics_stream: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timings {
    pub limit_seconds: f64,
    pub simulation_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub artifact_version: &'static str,
    pub schema_version: u32,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub replicas: usize,
    pub workers: usize,
    pub replica_seeds: Vec<ReplicaSeed>,
    pub files: Vec<FileEntry>,
    pub timings: Timings,
    pub exit_code: i32,
}
