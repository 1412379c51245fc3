use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Option<String>,
    pub code_version: String,
    pub dataset_checksum: Option<String>,
    pub rng_algorithm: String,
    pub threads: usize,
    pub started_unix: u64,
    pub status: String,
    pub elapsed_seconds: Option<f64>,
    /// Per-epoch wall time for training runs.
    pub epoch_seconds: Vec<f64>,
}

pub struct ManifestWriter {
    path: PathBuf,
    start: Instant,
    pub manifest: RunManifest,
}

impl ManifestWriter {
    /// Creates `out` and writes the manifest with status `running`.
    pub fn begin(out: &Path, command: &str, config: Option<String>, dataset_checksum: Option<String>) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let manifest = RunManifest {
            command: command.to_owned(),
            args: std::env::args().collect(),
            config,
            code_version: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            dataset_checksum,
            rng_algorithm: ramrec::numerics::RNG_ALGORITHM.to_owned(),
            threads: rayon::current_num_threads(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            status: "running".to_owned(),
            elapsed_seconds: None,
            epoch_seconds: Vec::new(),
        };
        let w = Self { path: out.join(MANIFEST_FILE), start: Instant::now(), manifest };
        w.write()?;
        Ok(w)
    }

    fn write(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&self.path, text + "\n").with_context(|| format!("writing {}", self.path.display()))
    }

    pub fn finish(mut self) -> Result<()> {
        self.manifest.status = "complete".to_owned();
        self.manifest.elapsed_seconds = Some(self.start.elapsed().as_secs_f64());
        self.write()
    }
}

/// Hex SHA-256 of one file, or of several files in order.
pub fn checksum_files(paths: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    for p in paths {
        let mut f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
        loop {
            let k = f.read(&mut buf)?;
            if k == 0 {
                break;
            }
            h.update(&buf[..k]);
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
