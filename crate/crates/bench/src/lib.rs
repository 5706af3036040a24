//! Inputs shared by the criterion benchmarks: the shipped classifier and
//! the in-repo image fixture.

use std::path::{Path, PathBuf};

use segloo_core::data_io::{read_cifar10_file, ImageBatch};
use segloo_core::nn::load_weights;
use segloo_core::{ArchConfig, Network, Result, Tensor};

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn desk_model() -> Result<Network> {
    let root = workspace_root();
    let arch = ArchConfig::load(root.join("configs/desk_cifar10.json"))?;
    load_weights(root.join("models/desk_cifar10.sfw"), &arch)
}

/// The first `n` fixture images.
pub fn fixture_batch(n: usize) -> Result<ImageBatch> {
    let records = read_cifar10_file(workspace_root().join("fixtures/cifar10_test_512.bin"))?;
    let n = n.min(records.len());
    ImageBatch::from_records(&records[..n], (0..n as u64).collect())
}

/// Item `i` of a batch as a `C×H×W` tensor.
pub fn item_chw(batch: &ImageBatch, i: usize) -> Result<Tensor> {
    Tensor::new(batch.images.item_shape().to_vec(), batch.images.item(i).to_vec())
}
