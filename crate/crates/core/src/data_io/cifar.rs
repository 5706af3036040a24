//! CIFAR-10 binary records and in-memory image batches.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::TrainingData;
use crate::tensor::Tensor;

use super::atomic_write;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORD_LEN: usize = CIFAR_PIXELS + 1;
pub const CIFAR_CLASSES: [&str; 10] = [
    "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck",
];

/// One record: a label byte and 3072 pixel bytes (red plane, green plane,
/// blue plane, each row-major).
#[derive(Clone, PartialEq, Eq)]
pub struct Cifar10Record {
    pub label: u8,
    pub pixels: Box<[u8; CIFAR_PIXELS]>,
}

impl std::fmt::Debug for Cifar10Record {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cifar10Record").field("label", &self.label).finish_non_exhaustive()
    }
}

impl Cifar10Record {
    /// Pixels divided by 255, in `3×32×32` order.
    pub fn to_floats(&self, out: &mut [f32]) {
        for (o, &b) in out.iter_mut().zip(self.pixels.iter()) {
            *o = b as f32 / 255.0;
        }
    }

    /// Inverse of [`to_floats`](Self::to_floats): `round(v·255)` after
    /// clamping to `[0, 1]`.
    pub fn from_floats(label: u8, values: &[f32]) -> Result<Self> {
        if values.len() != CIFAR_PIXELS {
            return Err(Error::Shape(format!("{} values for a CIFAR-10 image", values.len())));
        }
        let mut pixels = Box::new([0u8; CIFAR_PIXELS]);
        for (p, &v) in pixels.iter_mut().zip(values) {
            if !v.is_finite() {
                return Err(Error::NonFinite("pixel value".into()));
            }
            *p = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        Ok(Cifar10Record { label, pixels })
    }
}

pub fn parse_cifar10(bytes: &[u8]) -> Result<Vec<Cifar10Record>> {
    let whole = bytes.len() / CIFAR_RECORD_LEN * CIFAR_RECORD_LEN;
    if whole != bytes.len() {
        return Err(Error::Truncated {
            offset: whole as u64,
            what: format!(
                "{} trailing bytes do not form a {CIFAR_RECORD_LEN}-byte record",
                bytes.len() - whole
            ),
        });
    }
    bytes
        .chunks_exact(CIFAR_RECORD_LEN)
        .enumerate()
        .map(|(i, chunk)| {
            if chunk[0] > 9 {
                return Err(Error::Format(format!(
                    "label {} at byte offset {} is not a CIFAR-10 class",
                    chunk[0],
                    i * CIFAR_RECORD_LEN
                )));
            }
            let mut pixels = Box::new([0u8; CIFAR_PIXELS]);
            pixels.copy_from_slice(&chunk[1..]);
            Ok(Cifar10Record {
                label: chunk[0],
                pixels,
            })
        })
        .collect()
}

pub fn encode_cifar10(records: &[Cifar10Record]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * CIFAR_RECORD_LEN);
    for r in records {
        out.push(r.label);
        out.extend_from_slice(&r.pixels[..]);
    }
    out
}

pub fn read_cifar10_file(path: impl AsRef<Path>) -> Result<Vec<Cifar10Record>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar10(&bytes).map_err(|e| match e {
        Error::Truncated { offset, what } => Error::Truncated {
            offset,
            what: format!("{}: {what}", path.display()),
        },
        other => other,
    })
}

pub fn write_cifar10_file(path: impl AsRef<Path>, records: &[Cifar10Record]) -> Result<()> {
    atomic_write(path.as_ref(), &encode_cifar10(records))
}

pub struct Cifar10 {
    pub train: Vec<Cifar10Record>,
    pub test: Vec<Cifar10Record>,
}

/// The five training files and the test file of the binary distribution.
pub fn cifar10_files(dir: &Path) -> (Vec<PathBuf>, PathBuf) {
    (
        (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        dir.join("test_batch.bin"),
    )
}

/// Loads the standard binary distribution from `dir`.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<Cifar10> {
    let (train_files, test_file) = cifar10_files(dir.as_ref());
    let mut train = Vec::with_capacity(50_000);
    for f in &train_files {
        train.extend(read_cifar10_file(f)?);
    }
    Ok(Cifar10 {
        train,
        test: read_cifar10_file(&test_file)?,
    })
}

impl TrainingData for [Cifar10Record] {
    fn len(&self) -> usize {
        <[Cifar10Record]>::len(self)
    }

    fn fill(&self, index: usize, out: &mut [f32]) -> usize {
        self[index].to_floats(out);
        self[index].label as usize
    }
}

impl TrainingData for Vec<Cifar10Record> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn fill(&self, index: usize, out: &mut [f32]) -> usize {
        TrainingData::fill(self.as_slice(), index, out)
    }
}

/// `N×3×32×32` images in `[0, 1]` with labels and source ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub source_ids: Vec<u64>,
}

impl ImageBatch {
    pub fn from_records(records: &[Cifar10Record], source_ids: Vec<u64>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidArgument("an image batch needs at least one image".into()));
        }
        if source_ids.len() != records.len() {
            return Err(Error::Shape(format!(
                "{} source ids for {} records",
                source_ids.len(),
                records.len()
            )));
        }
        let mut data = vec![0.0f32; records.len() * CIFAR_PIXELS];
        for (r, out) in records.iter().zip(data.chunks_exact_mut(CIFAR_PIXELS)) {
            r.to_floats(out);
        }
        Ok(ImageBatch {
            images: Tensor::new(vec![records.len(), 3, CIFAR_SIDE, CIFAR_SIDE], data)?,
            labels: records.iter().map(|r| r.label as usize).collect(),
            source_ids,
        })
    }

    /// Quantises back to bytes.
    pub fn to_records(&self) -> Result<Vec<Cifar10Record>> {
        (0..self.len())
            .map(|i| {
                let label = u8::try_from(self.labels[i])
                    .ok()
                    .filter(|&l| l <= 9)
                    .ok_or_else(|| Error::Format(format!("label {} is not a CIFAR-10 class", self.labels[i])))?;
                Cifar10Record::from_floats(label, self.images.item(i))
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Images `range` as a new batch.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let items: Vec<&[f32]> = range.clone().map(|i| self.images.item(i)).collect();
        Ok(ImageBatch {
            images: Tensor::stack(&items, self.images.item_shape())?,
            labels: self.labels[range.clone()].to_vec(),
            source_ids: self.source_ids[range].to_vec(),
        })
    }
}
