use super::{iqr_vector, AttributionMatrix, ForwardCounter, IqrVector, TapSet, OCCLUSION_VALUE};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, Network};
use crate::parallel;
use crate::segmentation::{LabelMap, SegmentationMethod};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractOptions {
    /// Occluded images per forward call.
    pub chunk: usize,
    /// Threads working on different images.
    pub workers: usize,
    /// Keep the full attribution matrices instead of only their IQRs.
    pub retain: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            chunk: 128,
            workers: 1,
            retain: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    pub image_id: u64,
    /// Class predicted for the unoccluded image.
    pub predicted: usize,
    pub segment_count: usize,
    /// One vector per requested tap set.
    pub iqr: Vec<IqrVector>,
    pub matrices: Option<Vec<AttributionMatrix>>,
}

fn union_layers(tapsets: &[TapSet]) -> Vec<usize> {
    let mut layers: Vec<usize> = tapsets.iter().flat_map(TapSet::trace_layers).collect();
    layers.sort_unstable();
    layers.dedup();
    layers
}

/// Attribution matrices of one `C×H×W` image for several tap sets at once,
/// sharing the `k + 1` forward passes. Occluded copies are pushed through
/// the network `chunk` at a time.
pub fn loo_attributions_multi(
    net: &Network,
    image: &Tensor,
    image_id: u64,
    map: &LabelMap,
    tapsets: &[TapSet],
    chunk: usize,
    counter: &ForwardCounter,
) -> Result<(usize, Vec<AttributionMatrix>)> {
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
    if chunk == 0 {
        return Err(Error::InvalidArgument("chunk must be >= 1".into()));
    }
    let layers = union_layers(tapsets);
    let single = Tensor::new(vec![1, c, h, w], image.data().to_vec())?;
    let base = net.forward(&single, &layers)?;
    counter.add(1);
    let class = argmax_rows(base.logits.data(), net.class_count())[0];
    let baselines: Vec<Vec<f32>> = tapsets
        .iter()
        .map(|t| {
            let mut v = Vec::with_capacity(t.dimension());
            t.read(&base, 0, class, &mut v);
            v
        })
        .collect();

    let k = map.segment_count();
    let segments = map.segment_pixels();
    let plane = h * w;
    let mut values: Vec<Vec<f32>> = tapsets
        .iter()
        .map(|t| Vec::with_capacity(k * t.dimension()))
        .collect();
    let mut row = Vec::new();
    for start in (0..k).step_by(chunk) {
        let end = (start + chunk).min(k);
        let mut data = Vec::with_capacity((end - start) * image.len());
        for seg in &segments[start..end] {
            let offset = data.len();
            data.extend_from_slice(image.data());
            for &p in seg {
                for ch in 0..c {
                    data[offset + ch * plane + p as usize] = OCCLUSION_VALUE;
                }
            }
        }
        let batch = Tensor::new(vec![end - start, c, h, w], data)?;
        let out = net.forward(&batch, &layers)?;
        counter.add((end - start) as u64);
        for item in 0..end - start {
            for ((t, base), dst) in tapsets.iter().zip(&baselines).zip(values.iter_mut()) {
                row.clear();
                t.read(&out, item, class, &mut row);
                dst.extend(row.iter().zip(base).map(|(v, b)| (v - b).abs()));
            }
        }
    }
    let matrices = tapsets
        .iter()
        .zip(values)
        .map(|(t, v)| AttributionMatrix::new(image_id, k, t.dimension(), v))
        .collect::<Result<Vec<_>>>()?;
    Ok((class, matrices))
}

/// Attribution matrix of one `C×H×W` image, one forward pass per occlusion.
pub fn loo_attributions(
    net: &Network,
    image: &Tensor,
    map: &LabelMap,
    taps: &TapSet,
    counter: &ForwardCounter,
) -> Result<AttributionMatrix> {
    let (_, mut m) = loo_attributions_multi(net, image, 0, map, std::slice::from_ref(taps), 1, counter)?;
    Ok(m.pop().expect("one tap set"))
}

/// Segments every image of an `N×C×H×W` batch, runs the leave-one-out
/// passes and reduces each tap set to an IQR vector.
pub fn extract_features(
    net: &Network,
    images: &Tensor,
    image_ids: &[u64],
    segmentation: &SegmentationMethod,
    tapsets: &[TapSet],
    opts: &ExtractOptions,
    counter: &ForwardCounter,
) -> Result<Vec<ImageFeatures>> {
    let n = images.batch_len();
    if image_ids.len() != n {
        return Err(Error::Shape(format!("{} ids for {n} images", image_ids.len())));
    }
    if tapsets.is_empty() {
        return Err(Error::InvalidArgument("no tap sets requested".into()));
    }
    let indices: Vec<usize> = (0..n).collect();
    parallel::map(&indices, opts.workers, |_, &i| {
        let image = Tensor::new(images.item_shape().to_vec(), images.item(i).to_vec())?;
        let map = segmentation.segment_chw(&image)?;
        let (predicted, matrices) =
            loo_attributions_multi(net, &image, image_ids[i], &map, tapsets, opts.chunk, counter)?;
        let iqr = matrices.iter().map(iqr_vector).collect::<Result<Vec<_>>>()?;
        Ok(ImageFeatures {
            image_id: image_ids[i],
            predicted,
            segment_count: map.segment_count(),
            iqr,
            matrices: opts.retain.then_some(matrices),
        })
    })
}
