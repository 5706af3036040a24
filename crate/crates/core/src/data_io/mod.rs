//! On-disk formats: CIFAR-10 records, experiment manifests, feature and
//! report CSVs, and the shared atomic-write and checksum helpers.

mod cifar;
mod manifest;
mod report;


pub use cifar::{
    cifar10_files, encode_cifar10, load_cifar10, parse_cifar10, read_cifar10_file, write_cifar10_file, Cifar10,
    Cifar10Record, ImageBatch, CIFAR_CLASSES, CIFAR_PIXELS, CIFAR_RECORD_LEN, CIFAR_SIDE,
};

pub use manifest::{assemble_experiment, assemble_with, Experiment, ExperimentManifest, FileRef};
pub use report::{decode_report, encode_report, read_report, write_report, ReportRow, REPORT_HEADER};

use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// `<file>.provenance.json` next to an output file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    path.with_file_name(name)
}

/// Lower-case hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Fails with [`Error::Checksum`] unless `path` hashes to `expected`.
pub fn verify_checksum(path: &Path, expected: &str) -> Result<()> {
    let actual = sha256_file(path)?;
    if !actual.eq_ignore_ascii_case(expected) {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            expected: expected.to_owned(),
            actual,
        });
    }
    Ok(())
}
