//! Superpixel segmentation into label maps.
//!
//! Every algorithm takes an `H×W×3` image in `[0, 1]` and returns a
//! [`LabelMap`]: a partition of the pixels into `k` segments labelled
//! `0..k`, each segment 4-connected. [`per_pixel`] is the degenerate
//! partition with one segment per pixel.

mod color;
mod felzenszwalb;
mod file;
mod quickshift;
mod slic;

#[cfg(test)]
mod tests;

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cell::Cell;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use color::{gaussian_smooth, rgb_to_lab};
pub use felzenszwalb::{felzenszwalb, FelzParams};
pub use file::{decode_label_maps, encode_label_maps, read_label_maps, write_label_maps, LABELS_MAGIC};
pub use quickshift::{quickshift, QuickshiftParams};
pub use slic::{slic, SlicParams};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    segment_count: usize,
}

impl LabelMap {
    /// Wraps labels that already form `0..k` with every id used.
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        let k = labels.iter().max().map_or(0, |&m| m as usize + 1);
        let mut seen = vec![false; k];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!(
                "labels are not contiguous: id {missing} unused below {k}"
            )));
        }
        Ok(LabelMap {
            height,
            width,
            labels,
            segment_count: k,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn segment_count(&self) -> usize {
        self.segment_count
    }

    pub fn label_at(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.segment_count];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// Flat pixel indices of each segment, in raster order.
    pub fn segment_pixels(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.segment_count];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i as u32);
        }
        out
    }

    pub fn is_four_connected(&self) -> bool {
        components4(self.height, self.width, &self.labels).1 == self.segment_count
    }
}

/// Renumbers arbitrary labels to `0..k` by rank, keeping the partition.
pub fn relabel_contiguous(height: usize, width: usize, labels: &[u32]) -> Result<LabelMap> {
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let relabelled = labels
        .iter()
        .map(|l| distinct.binary_search(l).unwrap() as u32)
        .collect();
    LabelMap::new(height, width, relabelled)
}

/// One segment per pixel: `label(i, j) = i·W + j`.
pub fn per_pixel(height: usize, width: usize) -> LabelMap {
    LabelMap {
        height,
        width,
        labels: (0..(height * width) as u32).collect(),
        segment_count: height * width,
    }
}

/// Labels the 4-connected components of equal-label regions. Components
/// are numbered in raster order of their first pixel.
pub(crate) fn components4(height: usize, width: usize, labels: &[u32]) -> (Vec<u32>, usize) {
    const UNSEEN: u32 = u32::MAX;
    let mut comp = vec![UNSEEN; labels.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if comp[start] != UNSEEN {
            continue;
        }
        comp[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (y, x) = (p / width, p % width);
            for q in neighbours4(y, x, height, width) {
                if comp[q] == UNSEEN && labels[q] == labels[p] {
                    comp[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    (comp, next as usize)
}

pub(crate) fn neighbours4(y: usize, x: usize, height: usize, width: usize) -> impl Iterator<Item = usize> {
    let up = (y > 0).then(|| (y - 1) * width + x);
    let left = (x > 0).then(|| y * width + x - 1);
    let right = (x + 1 < width).then(|| y * width + x + 1);
    let down = (y + 1 < height).then(|| (y + 1) * width + x);
    [up, left, right, down].into_iter().flatten()
}

/// Extents of an `H×W×3` image; zero-sized images are rejected.
pub(crate) fn image_dims(image: &Tensor) -> Result<(usize, usize)> {
    match *image.shape() {
        [h, w, 3] if h > 0 && w > 0 => Ok((h, w)),
        [h, w, 3] => Err(Error::InvalidArgument(format!("image has no pixels ({h}x{w})"))),
        _ => Err(Error::Shape(format!(
            "expected an HxWx3 image, got shape {:?}",
            image.shape()
        ))),
    }
}

/// A segmentation algorithm together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum SegmentationMethod {
    PerPixel,
    Felzenszwalb(FelzParams),
    Quickshift(QuickshiftParams),
    Slic(SlicParams),
}

impl SegmentationMethod {
    /// Segments an `H×W×3` image.
    pub fn segment(&self, image: &Tensor) -> Result<LabelMap> {
        match self {
            SegmentationMethod::PerPixel => {
                let (h, w) = image_dims(image)?;
                Ok(per_pixel(h, w))
            }
            SegmentationMethod::Felzenszwalb(p) => felzenszwalb(image, p),
            SegmentationMethod::Quickshift(p) => quickshift(image, p),
            SegmentationMethod::Slic(p) => slic(image, p),
        }
    }

    /// Segments a `3×H×W` image as laid out for the network.
    pub fn segment_chw(&self, image: &Tensor) -> Result<LabelMap> {
        if let (SegmentationMethod::PerPixel, [3, h, w]) = (self, image.shape()) {
            return Ok(per_pixel(*h, *w));
        }
        self.segment(&image.chw_to_hwc()?)
    }

    /// Short name used in reports: `per-pixel`, `felzenszwalb`, ...
    pub fn name(&self) -> &'static str {
        match self {
            SegmentationMethod::PerPixel => "per-pixel",
            SegmentationMethod::Felzenszwalb(_) => "felzenszwalb",
            SegmentationMethod::Quickshift(_) => "quickshift",
            SegmentationMethod::Slic(_) => "slic",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cell = Cell::parse(text)?;
        match cell.name.as_str() {
            "per-pixel" | "pixel" | "loo" => {
                cell.expect_keys(&[])?;
                Ok(SegmentationMethod::PerPixel)
            }
            "felzenszwalb" | "felz" => {
                cell.expect_keys(&["scale", "sigma", "min_size"])?;
                let d = FelzParams::default();
                let p = FelzParams {
                    scale: cell.get("scale", d.scale)?,
                    sigma: cell.get("sigma", d.sigma)?,
                    min_size: cell.get("min_size", d.min_size)?,
                };
                p.validate()?;
                Ok(SegmentationMethod::Felzenszwalb(p))
            }
            "quickshift" => {
                cell.expect_keys(&["sigma", "max_dist", "kernel_size", "ratio"])?;
                let d = QuickshiftParams::default();
                let p = QuickshiftParams {
                    sigma: cell.get("sigma", d.sigma)?,
                    max_dist: cell.get("max_dist", d.max_dist)?,
                    kernel_size: cell.get("kernel_size", d.kernel_size)?,
                    ratio: cell.get("ratio", d.ratio)?,
                };
                p.validate()?;
                Ok(SegmentationMethod::Quickshift(p))
            }
            "slic" => {
                cell.expect_keys(&["n_segments", "compactness", "max_iter", "enforce_connectivity"])?;
                let d = SlicParams::default();
                let p = SlicParams {
                    n_segments: cell.get("n_segments", d.n_segments)?,
                    compactness: cell.get("compactness", d.compactness)?,
                    max_iter: cell.get("max_iter", d.max_iter)?,
                    enforce_connectivity: cell.get("enforce_connectivity", d.enforce_connectivity)?,
                };
                p.validate()?;
                Ok(SegmentationMethod::Slic(p))
            }
            other => Err(Error::Config(format!("unknown segmentation method {other:?}"))),
        }
    }
}

impl fmt::Display for SegmentationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentationMethod::PerPixel => f.write_str("per-pixel"),
            SegmentationMethod::Felzenszwalb(p) => write!(
                f,
                "felzenszwalb:scale={},sigma={},min_size={}",
                p.scale, p.sigma, p.min_size
            ),
            SegmentationMethod::Quickshift(p) => write!(
                f,
                "quickshift:sigma={},max_dist={},kernel_size={},ratio={}",
                p.sigma, p.max_dist, p.kernel_size, p.ratio
            ),
            SegmentationMethod::Slic(p) => write!(
                f,
                "slic:n_segments={},compactness={},max_iter={},enforce_connectivity={}",
                p.n_segments, p.compactness, p.max_iter, p.enforce_connectivity
            ),
        }
    }
}

impl std::str::FromStr for SegmentationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SegmentationMethod::parse(s)
    }
}
