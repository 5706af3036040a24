use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{atomic_write, encode_cifar10, read_cifar10_file, sha256_hex, verify_checksum, Cifar10Record, ImageBatch};
use crate::attacks::{attack_records, AdversarialSet, AttackSpec};
use crate::error::{Error, Result};
use crate::nn::{load_weights, ArchConfig, Network};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRef {
    pub fn resolve(&self, base: &Path) -> PathBuf {
        if self.path.is_absolute() {
            self.path.clone()
        } else {
            base.join(&self.path)
        }
    }
}

fn default_batch_size() -> usize {
    128
}

fn default_train_fraction() -> f64 {
    0.8
}

/// Everything needed to rebuild a benign/adversarial experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    /// e.g. `fgsm:eps=0.02,0.06,0.1`; budgets are spread over the batches
    /// in equal consecutive parts.
    pub attack: String,
    #[serde(default)]
    pub segmentations: Vec<String>,
    #[serde(default)]
    pub modes: Vec<String>,
    /// Batches per side.
    pub batches: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub sample_seed: u64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Attack the benign images themselves instead of a disjoint draw.
    #[serde(default)]
    pub paired: bool,
    /// Drop adversarial images whose attack failed.
    #[serde(default)]
    pub successful_only: bool,
    pub images: FileRef,
    pub arch: FileRef,
    pub weights: FileRef,
}

impl ExperimentManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: ExperimentManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        atomic_write(path.as_ref(), format!("{text}\n").as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batches == 0 || self.batch_size == 0 {
            return Err(Error::Config("manifest needs at least one non-empty batch".into()));
        }
        AttackSpec::parse(&self.attack)?;
        Ok(())
    }

    pub fn images_per_side(&self) -> usize {
        self.batches * self.batch_size
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub benign: Vec<Cifar10Record>,
    /// Positions of the benign images in the source file.
    pub benign_sources: Vec<u64>,
    pub adversarial: AdversarialSet,
    /// SHA-256 over both record sets and the per-image budgets.
    pub sha256: String,
}

impl Experiment {
    pub fn benign_batch(&self) -> Result<ImageBatch> {
        ImageBatch::from_records(&self.benign, self.benign_sources.clone())
    }

    pub fn adversarial_batch(&self) -> Result<ImageBatch> {
        ImageBatch::from_records(&self.adversarial.records, self.adversarial.meta.source_ids.clone())
    }
}

/// Checks every referenced file, draws the benign and source images, and
/// attacks the sources batch by batch.
pub fn assemble_experiment(manifest: &ExperimentManifest, base: &Path, workers: usize) -> Result<Experiment> {
    manifest.validate()?;
    for f in [&manifest.images, &manifest.arch, &manifest.weights] {
        verify_checksum(&f.resolve(base), &f.sha256)?;
    }
    let records = read_cifar10_file(manifest.images.resolve(base))?;
    let arch = ArchConfig::load(manifest.arch.resolve(base))?;
    let net = load_weights(manifest.weights.resolve(base), &arch)?;
    let mut exp = assemble_with(manifest, &records, &net, workers)?;
    exp.adversarial.meta.weights_sha256 = manifest.weights.sha256.to_ascii_lowercase();
    Ok(exp)
}

/// [`assemble_experiment`] on already loaded inputs.
pub fn assemble_with(
    manifest: &ExperimentManifest,
    records: &[Cifar10Record],
    net: &Network,
    workers: usize,
) -> Result<Experiment> {
    let spec = AttackSpec::parse(&manifest.attack)?;
    let per_side = manifest.images_per_side();
    let needed = if manifest.paired { per_side } else { 2 * per_side };
    if needed > records.len() {
        return Err(Error::InvalidArgument(format!(
            "manifest needs {needed} images, source has {}",
            records.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(manifest.sample_seed);
    let drawn = sample(&mut rng, records.len(), needed).into_vec();
    let benign_idx = &drawn[..per_side];
    let source_idx = if manifest.paired { benign_idx } else { &drawn[per_side..] };

    let originals: Vec<Cifar10Record> = source_idx.iter().map(|&i| records[i].clone()).collect();
    let ids: Vec<u64> = source_idx.iter().map(|&i| i as u64).collect();
    let mut adversarial = attack_records(net, &originals, &ids, &spec, manifest.batch_size, workers)?;
    if manifest.successful_only {
        adversarial = adversarial.successful();
    }
    let benign: Vec<Cifar10Record> = benign_idx.iter().map(|&i| records[i].clone()).collect();
    let mut digest = encode_cifar10(&benign);
    digest.extend(encode_cifar10(&adversarial.records));
    for e in &adversarial.meta.epsilons {
        digest.extend(e.to_le_bytes());
    }
    Ok(Experiment {
        benign,
        benign_sources: benign_idx.iter().map(|&i| i as u64).collect(),
        adversarial,
        sha256: sha256_hex(&digest),
    })
}
