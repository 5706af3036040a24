//! Time and memory accounting for the attribution step.
//!
//! Memory is analytic: an image with `k` segments and `d` taps holds a
//! `k × d` matrix of `f32`, so a batch needs `Σ k·d·4` bytes. Time is the
//! median wall clock of repeated runs after warm-up.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attribution::{extract_features, ExtractOptions, ForwardCounter, ImageFeatures, TapSet};
use crate::data_io::atomic_write;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::segmentation::SegmentationMethod;
use crate::tensor::Tensor;

/// Images per batch in reported per-batch times.
pub const REFERENCE_BATCH: usize = 128;

const F32_BYTES: u64 = std::mem::size_of::<f32>() as u64;

/// `Σ k·d·4` over `(segments, taps)` pairs.
pub fn accounting<I>(shapes: I) -> u64
where
    I: IntoIterator<Item = (usize, usize)>,
{
    shapes.into_iter().map(|(k, d)| k as u64 * d as u64 * F32_BYTES).sum()
}

/// Mean segments per image implied by an accounted byte count.
pub fn mean_segments_from_bytes(bytes: f64, images: usize, dimension: usize) -> f64 {
    bytes / (images as f64 * dimension as f64 * F32_BYTES as f64)
}

/// Median of the samples; the mean of the middle pair for even counts.
pub fn median(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { (s[m - 1] + s[m]) / 2.0 })
}

/// Runs `f` `warmup` times untimed, then `repetitions` times timed.
/// Returns the per-repetition seconds and the last result.
pub fn time_runs<R>(warmup: usize, repetitions: usize, mut f: impl FnMut() -> Result<R>) -> Result<(Vec<f64>, R)> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("need at least one timed repetition".into()));
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(repetitions);
    let mut last = None;
    for _ in 0..repetitions {
        let t = Instant::now();
        let r = f()?;
        times.push(t.elapsed().as_secs_f64());
        last = Some(r);
    }
    Ok((times, last.expect("at least one repetition")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub warmup: usize,
    pub repetitions: usize,
    pub workers: usize,
    pub chunk: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            warmup: 1,
            repetitions: 3,
            workers: 1,
            chunk: 128,
        }
    }
}

/// One (segmentation, tap mode) cell of the benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub segmentation: String,
    pub mode: String,
    pub images: usize,
    pub workers: usize,
    pub repetitions: usize,
    pub median_seconds: f64,
    /// `median_seconds` scaled to a batch of [`REFERENCE_BATCH`] images.
    pub seconds_per_batch: f64,
    pub forward_passes: u64,
    pub mean_segments: f64,
    pub dimension: usize,
    pub attribution_bytes: u64,
    pub auc: Option<f64>,
}

impl BenchRecord {
    /// Columns that must not change between reruns of the same config.
    pub fn stable_columns(&self) -> (String, String, usize, usize, usize, u64, usize, u64) {
        (
            self.segmentation.clone(),
            self.mode.clone(),
            self.images,
            self.workers,
            self.repetitions,
            self.forward_passes,
            self.dimension,
            self.attribution_bytes,
        )
    }
}

/// Times feature extraction for one cell and checks the forward-pass count
/// of every repetition against `Σ (k + 1)`. The features of the last run
/// are returned for reuse.
pub fn bench_cell(
    net: &Network,
    images: &Tensor,
    ids: &[u64],
    segmentation: &SegmentationMethod,
    taps: &TapSet,
    opts: &BenchOptions,
) -> Result<(BenchRecord, Vec<ImageFeatures>)> {
    let counter = ForwardCounter::new();
    let extract = ExtractOptions {
        chunk: opts.chunk,
        workers: opts.workers,
        retain: false,
    };
    let mut passes = Vec::new();
    let (times, features) = time_runs(opts.warmup, opts.repetitions, || {
        counter.reset();
        let f = extract_features(net, images, ids, segmentation, std::slice::from_ref(taps), &extract, &counter)?;
        passes.push(counter.get());
        Ok(f)
    })?;
    let expected: u64 = features.iter().map(|f| f.segment_count as u64 + 1).sum();
    if let Some(bad) = passes.iter().find(|&&p| p != expected) {
        return Err(Error::InvalidArgument(format!(
            "counted {bad} forward passes, expected {expected}"
        )));
    }
    let n = features.len();
    let d = taps.dimension();
    let median_seconds = median(&times).expect("non-empty");
    let record = BenchRecord {
        segmentation: segmentation.to_string(),
        mode: taps.mode.to_string(),
        images: n,
        workers: opts.workers,
        repetitions: opts.repetitions,
        median_seconds,
        seconds_per_batch: median_seconds * REFERENCE_BATCH as f64 / n.max(1) as f64,
        forward_passes: expected,
        mean_segments: features.iter().map(|f| f.segment_count as f64).sum::<f64>() / n.max(1) as f64,
        dimension: d,
        attribution_bytes: accounting(features.iter().map(|f| (f.segment_count, d))),
        auc: None,
    };
    Ok((record, features))
}

pub fn encode_bench_csv(records: &[BenchRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

pub fn decode_bench_csv(bytes: &[u8]) -> Result<Vec<BenchRecord>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .map(|r| r.map_err(|e| Error::Format(e.to_string())))
        .collect()
}

pub fn write_bench_csv(path: impl AsRef<Path>, records: &[BenchRecord]) -> Result<()> {
    atomic_write(path.as_ref(), &encode_bench_csv(records)?)
}

/// Time-vs-AUC points for cells that have an AUC.
pub fn encode_scatter_csv(records: &[BenchRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["segmentation", "mode", "seconds_per_batch", "auc"]).map_err(fmt)?;
    for r in records {
        if let Some(auc) = r.auc {
            w.write_record([
                r.segmentation.clone(),
                r.mode.clone(),
                r.seconds_per_batch.to_string(),
                auc.to_string(),
            ])
            .map_err(fmt)?;
        }
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}
