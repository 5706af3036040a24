use super::{extract_features, ExtractOptions, FeatureDataset, FeatureProvenance, FeatureRow, ForwardCounter, SampleClass, TapMode, TapSet};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::segmentation::SegmentationMethod;
use crate::tensor::Tensor;

/// A batch of images that all carry the same detector label.
#[derive(Debug, Clone, Copy)]
pub struct LabeledGroup<'a> {
    pub images: &'a Tensor,
    pub ids: &'a [u64],
    pub class: SampleClass,
    /// Prefix of each row's `source` column, e.g. `test`.
    pub source: &'a str,
    /// `none` for benign images.
    pub attack: &'a str,
    /// Per-image budget; empty means 0 for every image.
    pub epsilons: &'a [f32],
}

/// Extracts features of every group under one segmentation and returns one
/// dataset per tap set, rows in group order. All tap sets share the
/// forward passes.
pub fn build_feature_datasets(
    net: &Network,
    groups: &[LabeledGroup<'_>],
    segmentation: &SegmentationMethod,
    tapsets: &[TapSet],
    opts: &ExtractOptions,
    counter: &ForwardCounter,
    weights_sha256: &str,
) -> Result<Vec<FeatureDataset>> {
    let mut rows: Vec<Vec<FeatureRow>> = vec![Vec::new(); tapsets.len()];
    for g in groups {
        let n = g.images.batch_len();
        if !g.epsilons.is_empty() && g.epsilons.len() != n {
            return Err(Error::Shape(format!("{} budgets for {n} images", g.epsilons.len())));
        }
        let feats = extract_features(net, g.images, g.ids, segmentation, tapsets, opts, counter)?;
        for (i, f) in feats.into_iter().enumerate() {
            for (dst, iqr) in rows.iter_mut().zip(f.iqr) {
                dst.push(FeatureRow {
                    image_id: f.image_id,
                    source: format!("{}:{}", g.source, f.image_id),
                    attack: g.attack.to_owned(),
                    epsilon: g.epsilons.get(i).copied().unwrap_or(0.0),
                    label: g.class,
                    features: iqr.values,
                });
            }
        }
    }
    tapsets
        .iter()
        .zip(rows)
        .map(|(t, r)| {
            let provenance = FeatureProvenance {
                segmentation: segmentation.to_string(),
                tap_mode: t.mode.to_string(),
                tap_seed: match t.mode {
                    TapMode::MultiLayer { seed, .. } => Some(seed),
                    _ => None,
                },
                weights_sha256: weights_sha256.to_owned(),
                dimension: t.dimension(),
                extra: serde_json::Value::Null,
            };
            FeatureDataset::new(r, t.dimension(), provenance)
        })
        .collect()
}
