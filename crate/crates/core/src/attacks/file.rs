//! Adversarial sets on disk: CIFAR-10 records plus a JSON metadata sidecar.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{attack_batch, split_epsilons, AttackMethod, AttackSpec};
use crate::data_io::{atomic_write, encode_cifar10, parse_cifar10, sha256_hex, sidecar_path, Cifar10Record, ImageBatch, CIFAR_PIXELS};
use crate::error::{Error, Result};
use crate::nn::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialMeta {
    pub attack: String,
    pub method: String,
    pub seed: u64,
    /// Budget used for each image.
    pub epsilons: Vec<f32>,
    /// Dataset positions of the originals.
    pub source_ids: Vec<u64>,
    pub original_classes: Vec<usize>,
    /// Predictions on the stored (quantised) adversarial images.
    pub adversarial_classes: Vec<usize>,
    pub success: Vec<bool>,
    #[serde(default)]
    pub weights_sha256: String,
    /// SHA-256 of the record file this sidecar describes.
    pub records_sha256: String,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialSet {
    /// Adversarial images with their true labels.
    pub records: Vec<Cifar10Record>,
    pub meta: AdversarialMeta,
}

impl AdversarialSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Only the images whose attack succeeded.
    pub fn successful(&self) -> AdversarialSet {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.meta.success[i]).collect();
        let pick = |v: &[usize]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let meta = AdversarialMeta {
            epsilons: keep.iter().map(|&i| self.meta.epsilons[i]).collect(),
            source_ids: keep.iter().map(|&i| self.meta.source_ids[i]).collect(),
            original_classes: pick(&self.meta.original_classes),
            adversarial_classes: pick(&self.meta.adversarial_classes),
            success: vec![true; keep.len()],
            records_sha256: String::new(),
            ..self.meta.clone()
        };
        let records: Vec<Cifar10Record> = keep.iter().map(|&i| self.records[i].clone()).collect();
        AdversarialSet {
            meta: AdversarialMeta {
                records_sha256: sha256_hex(&encode_cifar10(&records)),
                ..meta
            },
            records,
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.records.len();
        let m = &self.meta;
        let lens = [
            m.epsilons.len(),
            m.source_ids.len(),
            m.original_classes.len(),
            m.adversarial_classes.len(),
            m.success.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::Format(format!(
                "adversarial metadata lists have lengths {lens:?} for {n} images"
            )));
        }
        Ok(())
    }
}

/// Bytes for adversarial pixel values, rounded to the nearest level that
/// keeps `|q/255 - original/255| <= ε`.
pub fn quantize_within_budget(values: &[f32], original: &[u8], epsilon: f32) -> Result<Vec<u8>> {
    if values.len() != original.len() {
        return Err(Error::Shape(format!(
            "{} values for {} original bytes",
            values.len(),
            original.len()
        )));
    }
    values
        .iter()
        .zip(original)
        .map(|(&v, &o)| {
            if !v.is_finite() {
                return Err(Error::NonFinite("adversarial pixel".into()));
            }
            let mut q = (v.clamp(0.0, 1.0) * 255.0).round() as i32;
            let o = o as i32;
            while ((q - o).abs() as f32) / 255.0 > epsilon + 1e-6 {
                q += (o - q).signum();
            }
            Ok(q as u8)
        })
        .collect()
}

/// Attacks `originals` in consecutive batches of `batch_size`. The budgets
/// of `spec` are spread over the batches in equal consecutive parts and the
/// random seed advances by one per batch. Results are stored as bytes
/// within budget (DeepFool is unbounded) and success is judged on the
/// stored bytes, not the float attack output.
pub fn attack_records(
    net: &Network,
    originals: &[Cifar10Record],
    source_ids: &[u64],
    spec: &AttackSpec,
    batch_size: usize,
    workers: usize,
) -> Result<AdversarialSet> {
    if source_ids.len() != originals.len() {
        return Err(Error::Shape(format!("{} ids for {} images", source_ids.len(), originals.len())));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    let n = originals.len();
    let batch_eps = split_epsilons(n.div_ceil(batch_size), &spec.epsilons)?;
    let mut records = Vec::with_capacity(n);
    let mut meta = AdversarialMeta {
        attack: spec.to_string(),
        method: spec.method.to_string(),
        seed: spec.seed,
        epsilons: Vec::with_capacity(n),
        source_ids: source_ids.to_vec(),
        original_classes: Vec::with_capacity(n),
        adversarial_classes: Vec::new(),
        success: Vec::new(),
        weights_sha256: String::new(),
        records_sha256: String::new(),
        extra: serde_json::Value::Null,
    };
    for (b, &eps) in batch_eps.iter().enumerate() {
        let range = b * batch_size..((b + 1) * batch_size).min(n);
        let part = &originals[range.clone()];
        let batch = ImageBatch::from_records(part, source_ids[range].to_vec())?;
        let mut params = spec.params(eps);
        params.seed = params.seed.wrapping_add(b as u64);
        let (results, _) = attack_batch(net, &batch.images, &batch.labels, &params, workers)?;
        let budget = if spec.method == AttackMethod::DeepFool { f32::INFINITY } else { eps };
        for (r, orig) in results.iter().zip(part) {
            let bytes = quantize_within_budget(r.adversarial.data(), &orig.pixels[..], budget)?;
            let pixels: Box<[u8; CIFAR_PIXELS]> = bytes
                .into_boxed_slice()
                .try_into()
                .map_err(|_| Error::Shape("adversarial image size".into()))?;
            records.push(Cifar10Record {
                label: orig.label,
                pixels,
            });
            meta.original_classes.push(r.original_class);
        }
        meta.epsilons.extend(std::iter::repeat_n(eps, part.len()));
    }
    let stored = ImageBatch::from_records(&records, meta.source_ids.clone())?;
    let predicted = net.predict(&stored.images)?;
    meta.success = predicted.iter().zip(&stored.labels).map(|(p, l)| p != l).collect();
    meta.adversarial_classes = predicted;
    meta.records_sha256 = sha256_hex(&encode_cifar10(&records));
    Ok(AdversarialSet { records, meta })
}

/// Writes `<path>` as CIFAR-10 records and `<path>.provenance.json` as the
/// metadata; the metadata's record checksum is filled in here.
pub fn write_adversarial_set(path: impl AsRef<Path>, set: &AdversarialSet) -> Result<AdversarialMeta> {
    set.check()?;
    let path = path.as_ref();
    let bytes = encode_cifar10(&set.records);
    let meta = AdversarialMeta {
        records_sha256: sha256_hex(&bytes),
        ..set.meta.clone()
    };
    atomic_write(path, &bytes)?;
    let text = serde_json::to_string_pretty(&meta)?;
    atomic_write(&sidecar_path(path), format!("{text}\n").as_bytes())?;
    Ok(meta)
}

/// Reads a set back and verifies the record checksum.
pub fn read_adversarial_set(path: impl AsRef<Path>) -> Result<AdversarialSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: AdversarialMeta = serde_json::from_str(&text)?;
    let actual = sha256_hex(&bytes);
    if actual != meta.records_sha256 {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            expected: meta.records_sha256,
            actual,
        });
    }
    let set = AdversarialSet {
        records: parse_cifar10(&bytes)?,
        meta,
    };
    set.check()?;
    Ok(set)
}
