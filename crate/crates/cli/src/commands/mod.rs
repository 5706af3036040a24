pub mod attack;
pub mod bench;
pub mod evaluate;
pub mod extract;
pub mod report;
pub mod segment;
pub mod train_detector;
pub mod train_model;

use std::path::{Path, PathBuf};

use serde_json::Value;

use segloo_core::data_io::{atomic_write, read_cifar10_file, sha256_file, sidecar_path, Cifar10Record};
use segloo_core::nn::load_weights;
use segloo_core::{ArchConfig, Error, Network, Result};

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    atomic_write(path, format!("{text}\n").as_bytes())
}

pub fn write_sidecar(path: &Path, value: &Value) -> Result<()> {
    write_json(&sidecar_path(path), value)
}

pub struct Model {
    pub net: Network,
    pub weights_sha256: String,
    pub info: Value,
}

/// Loads architecture and weights and records their checksums.
pub fn load_model(arch: &Path, weights: &Path) -> Result<Model> {
    let config = ArchConfig::load(arch)?;
    let net = load_weights(weights, &config)?;
    let weights_sha256 = sha256_file(weights)?;
    let info = serde_json::json!({
        "arch": arch.display().to_string(),
        "arch_sha256": sha256_file(arch)?,
        "weights": weights.display().to_string(),
        "weights_sha256": weights_sha256,
    });
    Ok(Model {
        net,
        weights_sha256,
        info,
    })
}

/// Records `[offset, offset + limit)` of a CIFAR-10 file with their
/// positions in it.
pub fn load_records(path: &Path, offset: usize, limit: Option<usize>) -> Result<(Vec<Cifar10Record>, Vec<u64>)> {
    let mut all = read_cifar10_file(path)?;
    if offset > all.len() {
        return Err(Error::InvalidArgument(format!(
            "offset {offset} past the {} images of {}",
            all.len(),
            path.display()
        )));
    }
    let end = limit.map_or(all.len(), |n| (offset + n).min(all.len()));
    let records: Vec<Cifar10Record> = all.drain(offset..end).collect();
    Ok((records, (offset as u64..end as u64).collect()))
}

/// A file-name friendly form of a cell spec.
pub fn slug(text: &str) -> String {
    let mut out = String::new();
    for c in text.chars() {
        if c.is_ascii_alphanumeric() || c == '.' {
            out.push(c);
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_owned()
}

pub fn output_dir(out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out).map_err(|e| Error::Config(format!("cannot create {}: {e}", out.display())))?;
    Ok(out.to_path_buf())
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}
