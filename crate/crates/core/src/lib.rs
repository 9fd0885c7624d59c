//! Text dataset distillation.
//!
//! A labelled corpus is compressed into a handful of synthetic embedding
//! matrices per class. The matrices are trained by differentiating a
//! classifier's real-data loss through the SGD steps that fit the
//! classifier to the synthetic set.

pub mod cli;
pub mod distill;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod tensor;
pub mod textdata;

use std::io::Write;
use std::path::Path;

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
