//! Segment-wise leave-one-out attribution for detecting adversarial images.
//!
//! The pipeline: a small CNN ([`nn`]) classifies CIFAR-10 images
//! ([`data_io`]); adversarial counterparts are produced by gradient attacks
//! ([`attacks`]); each image is partitioned into segments
//! ([`segmentation`]) that are blacked out one at a time while selected
//! network nodes are monitored ([`attribution`]); the interquartile range of
//! each node's attributions forms a feature vector fed to a binary detector
//! ([`detector`]). [`bench`] accounts for the time and memory of the
//! attribution step.

pub mod attacks;
pub mod attribution;
pub mod bench;
pub mod cell;
pub mod data_io;
pub mod detector;
pub mod error;
pub mod nn;
pub mod parallel;
pub mod segmentation;
pub mod tensor;

pub use error::{Error, Result};
pub use nn::{ArchConfig, ForwardOutput, ForwardTrace, LayerSpec, Network};
pub use segmentation::LabelMap;
pub use tensor::Tensor;
