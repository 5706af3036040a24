//! Leave-one-out attribution: black out one segment at a time, record how
//! far each monitored node moves, and summarise every node by the
//! interquartile range of its moves.

mod dataset;
mod extract;
mod features;
mod quantile;


use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::Cell;
use crate::error::{Error, Result};
use crate::nn::{ForwardOutput, Network};
use crate::segmentation::LabelMap;
use crate::tensor::Tensor;

pub use dataset::{build_feature_datasets, LabeledGroup};
pub use extract::{extract_features, loo_attributions, loo_attributions_multi, ExtractOptions, ImageFeatures};
pub use features::{
    encode_feature_csv, read_feature_csv, read_feature_dataset, write_feature_csv, write_feature_dataset, FeatureDataset,
    FeatureProvenance, FeatureRow, SampleClass,
};
pub use quantile::{empirical_quantile, iqr, iqr_vector, IqrVector};

/// Which nodes are monitored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum TapMode {
    /// Probability of the class predicted for the unoccluded image.
    PredictedClass,
    /// All class probabilities.
    OutputLayer,
    /// `per_layer` random nodes from each of the last `last_layers`
    /// activation outputs (all of them when `None`).
    MultiLayer {
        per_layer: usize,
        last_layers: Option<usize>,
        seed: u64,
    },
}

impl TapMode {
    pub fn parse(text: &str) -> Result<Self> {
        let cell = Cell::parse(text)?;
        match cell.name.as_str() {
            "1d" | "predicted-class" => {
                cell.expect_keys(&[])?;
                Ok(TapMode::PredictedClass)
            }
            "10d" | "output" | "output-layer" => {
                cell.expect_keys(&[])?;
                Ok(TapMode::OutputLayer)
            }
            "multilayer" | "multi-layer" => {
                cell.expect_keys(&["per_layer", "last_layers", "seed"])?;
                let per_layer = cell.get("per_layer", 200usize)?;
                if per_layer == 0 {
                    return Err(Error::Config("multilayer per_layer must be >= 1".into()));
                }
                let last_layers = match cell.values("last_layers") {
                    None => None,
                    Some([v]) if v == "all" => None,
                    Some(_) => Some(cell.get("last_layers", 0usize)?),
                };
                Ok(TapMode::MultiLayer {
                    per_layer,
                    last_layers,
                    seed: cell.get("seed", 0u64)?,
                })
            }
            other => Err(Error::Config(format!("unknown tap mode {other:?}"))),
        }
    }

    /// Short name used in reports: `1d`, `10d`, `multilayer`.
    pub fn name(&self) -> &'static str {
        match self {
            TapMode::PredictedClass => "1d",
            TapMode::OutputLayer => "10d",
            TapMode::MultiLayer { .. } => "multilayer",
        }
    }
}

impl fmt::Display for TapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TapMode::PredictedClass => f.write_str("1d"),
            TapMode::OutputLayer => f.write_str("10d"),
            TapMode::MultiLayer {
                per_layer,
                last_layers,
                seed,
            } => {
                write!(f, "multilayer:per_layer={per_layer},last_layers=")?;
                match last_layers {
                    Some(n) => write!(f, "{n}")?,
                    None => f.write_str("all")?,
                }
                write!(f, ",seed={seed}")
            }
        }
    }
}

impl std::str::FromStr for TapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TapMode::parse(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tap {
    pub layer: usize,
    /// Flat index into the layer's per-image output.
    pub index: usize,
}

/// The monitored nodes, fixed for a network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapSet {
    pub mode: TapMode,
    /// Empty for [`TapMode::PredictedClass`], whose single node depends on
    /// the image.
    pub entries: Vec<Tap>,
}

impl TapSet {
    pub fn dimension(&self) -> usize {
        match self.mode {
            TapMode::PredictedClass => 1,
            _ => self.entries.len(),
        }
    }

    /// Layers whose trace the forward pass must keep.
    pub fn trace_layers(&self) -> Vec<usize> {
        match self.mode {
            TapMode::MultiLayer { .. } => {
                let mut layers: Vec<usize> = self.entries.iter().map(|t| t.layer).collect();
                layers.dedup();
                layers
            }
            _ => Vec::new(),
        }
    }

    /// Appends the tapped values of batch item `item` to `out`; `class` is
    /// the class predicted for the unoccluded image.
    pub fn read(&self, out: &ForwardOutput, item: usize, class: usize, dst: &mut Vec<f32>) {
        match self.mode {
            TapMode::PredictedClass => dst.push(out.probs.item(item)[class]),
            TapMode::OutputLayer => dst.extend_from_slice(out.probs.item(item)),
            TapMode::MultiLayer { .. } => {
                let mut layer = usize::MAX;
                let mut values: &[f32] = &[];
                for t in &self.entries {
                    if t.layer != layer {
                        layer = t.layer;
                        values = out.trace.get(layer).expect("tap layer traced").item(item);
                    }
                    dst.push(values[t.index]);
                }
            }
        }
    }
}

/// Chooses the monitored nodes. Multi-layer selection walks the chosen
/// post-activation layers in order, drawing indices without replacement from one seeded
/// stream; layers with at most `per_layer` nodes contribute every node.
pub fn select_taps(net: &Network, mode: &TapMode) -> Result<TapSet> {
    let entries = match *mode {
        TapMode::PredictedClass => Vec::new(),
        TapMode::OutputLayer => (0..net.class_count())
            .map(|index| Tap {
                layer: net.output_layer(),
                index,
            })
            .collect(),
        TapMode::MultiLayer {
            per_layer,
            last_layers,
            seed,
        } => {
            let layers = net.tappable_layers();
            let depth = layers.len();
            let n = last_layers.unwrap_or(depth);
            if n == 0 || n > depth {
                return Err(Error::InvalidArgument(format!(
                    "last_layers = {n} is outside 1..={depth} for this network"
                )));
            }
            if per_layer == 0 {
                return Err(Error::InvalidArgument("per_layer must be >= 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut entries = Vec::new();
            for &layer in &layers[depth - n..] {
                let size = net.layer_size(layer);
                let mut chosen: Vec<usize> = if size <= per_layer {
                    (0..size).collect()
                } else {
                    rand::seq::index::sample(&mut rng, size, per_layer).into_vec()
                };
                chosen.sort_unstable();
                entries.extend(chosen.into_iter().map(|index| Tap { layer, index }));
            }
            entries
        }
    };
    Ok(TapSet {
        mode: mode.clone(),
        entries,
    })
}

/// Counts single-image forward passes; shareable across threads.
#[derive(Debug, Default)]
pub struct ForwardCounter(AtomicU64);

impl ForwardCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, images: u64) {
        self.0.fetch_add(images, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) -> u64 {
        self.0.swap(0, Ordering::Relaxed)
    }
}

/// Value written into occluded pixels, in the canonical `[0, 1]` range.
pub const OCCLUSION_VALUE: f32 = 0.0;

/// Blacks out segment `segment` of a `C×H×W` image in every channel.
pub fn occlude(image: &Tensor, map: &LabelMap, segment: usize) -> Result<Tensor> {
    let [c, h, w] = *image.shape() else {
        return Err(Error::Shape(format!("expected CxHxW, got {:?}", image.shape())));
    };
    if (h, w) != (map.height(), map.width()) {
        return Err(Error::Shape(format!(
            "{h}x{w} image with a {}x{} label map",
            map.height(),
            map.width()
        )));
    }
    if segment >= map.segment_count() {
        return Err(Error::InvalidArgument(format!(
            "segment {segment} out of range for {} segments",
            map.segment_count()
        )));
    }
    let mut out = image.clone();
    let plane = h * w;
    let data = out.data_mut();
    for (p, &l) in map.labels().iter().enumerate() {
        if l as usize == segment {
            for ch in 0..c {
                data[ch * plane + p] = OCCLUSION_VALUE;
            }
        }
    }
    Ok(out)
}

/// `k × d` attributions of one image: row `i` holds `|f(x_i) - f(x)|` for
/// every tap, `x_i` being the image with segment `i` blacked out.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMatrix {
    pub image_id: u64,
    pub occlusions: usize,
    pub dimension: usize,
    pub values: Vec<f32>,
}

impl AttributionMatrix {
    pub fn new(image_id: u64, occlusions: usize, dimension: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != occlusions * dimension {
            return Err(Error::Shape(format!(
                "{} values for a {occlusions}x{dimension} attribution matrix",
                values.len()
            )));
        }
        Ok(AttributionMatrix {
            image_id,
            occlusions,
            dimension,
            values,
        })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn column(&self, j: usize) -> Vec<f32> {
        (0..self.occlusions).map(|i| self.values[i * self.dimension + j]).collect()
    }

    /// Bytes held by the values.
    pub fn byte_len(&self) -> usize {
        self.values.len() * std::mem::size_of::<f32>()
    }
}
