//! Run manifests and output hygiene.
//!
//! Every successful run writes `run_manifest.json` beside its outputs: the
//! command, the full effective configuration, the seed, timestamps, and
//! the input/output paths. Outputs are byte-deterministic given (inputs,
//! config, seed); only the manifest's timestamps vary between reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use shear::{Result, ShearError};

use crate::config::EffectiveConfig;

pub const RUN_MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Debug, serde::Serialize)]
pub struct RunManifest<'a> {
    pub command: &'a str,
    pub config: &'a EffectiveConfig,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Input paths by role (`manifest`, `data`, `config`, ...).
    pub inputs: Vec<(String, String)>,
    /// Output paths, in the order they were written.
    pub outputs: Vec<String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Removes this run's partially written outputs unless the run completed.
///
/// Paths are registered before their file is written, so any failure after
/// the first write still sweeps everything that may exist on disk.
pub struct OutputGuard {
    written: Vec<PathBuf>,
    complete: bool,
}

impl OutputGuard {
    pub fn new() -> Self {
        Self {
            written: Vec::new(),
            complete: false,
        }
    }

    pub fn register(&mut self, path: &Path) {
        self.written.push(path.to_path_buf());
    }

    /// Marks the run complete; outputs are kept from here on.
    pub fn keep(&mut self) {
        self.complete = true;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.complete {
            return;
        }
        for path in &self.written {
            let _ = fs::remove_file(path);
        }
    }
}

/// Creates the output directory (if needed) and returns it.
pub fn ensure_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| ShearError::io(out.display().to_string(), e))
}

/// Writes bytes to a registered output path.
pub fn write_output(guard: &mut OutputGuard, path: &Path, bytes: &[u8]) -> Result<()> {
    guard.register(path);
    fs::write(path, bytes).map_err(|e| ShearError::io(path.display().to_string(), e))
}

/// Serializes the run manifest (pretty JSON, trailing newline) and writes
/// it beside the outputs. Called last, after every output landed.
pub fn write_run_manifest(
    guard: &mut OutputGuard,
    out_dir: &Path,
    manifest: &RunManifest<'_>,
) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    write_output(guard, &out_dir.join(RUN_MANIFEST_NAME), text.as_bytes())
}

/// `{:.8e}` gives nine significant digits, enough to round-trip the
/// pipeline's comparisons while keeping rows compact and byte-stable.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.8e}")
}

/// CSV encoding failures (these writers target memory, so I/O is not
/// involved; anything surfacing here is malformed field data).
pub fn csv_fail(e: csv::Error) -> ShearError {
    ShearError::Validation(format!("csv encoding: {e}"))
}
