//! Benchmark harness behind the `cvgp` binary: truth manifests, batch runs
//! with held-out scoring, quantile reports and expression-space tables.

pub mod count;
pub mod error;
pub mod manifest;
pub mod report;
pub mod runner;
pub mod seeds;

pub use error::CliError;

use std::fs;
use std::io;
use std::path::Path;

/// Writes `contents` to `path` through a temporary sibling and a rename, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}
