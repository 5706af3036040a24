//! A small convolutional network engine: shape-checked construction,
//! batched forward propagation with activation taps, input gradients, a
//! minimal SGD trainer and a portable weight container.
//!
//! Images are fed as `[N, C, H, W]` tensors in the canonical `[0, 1]`
//! range. Per-channel normalization, when configured, happens inside the
//! network so that callers (attacks, occlusion) always work in `[0, 1]`.

mod ops;
mod train;
mod weights;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use train::{accuracy, mean_loss, train, LabeledImages, TrainHyper, TrainReport, TrainingData};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights, WEIGHTS_MAGIC};

/// Per-channel affine input normalization `(x - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

fn default_stride() -> usize {
    1
}

fn default_bn_eps() -> f32 {
    1e-5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Relu,
    #[serde(rename = "maxpool2x2")]
    MaxPool2x2,
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Flatten,
    /// Inference-only batch normalization with stored statistics.
    #[serde(rename = "batchnorm")]
    BatchNorm {
        channels: usize,
        #[serde(default = "default_bn_eps")]
        eps: f32,
    },
    /// Only valid as the final layer; its output is the probability vector.
    Softmax,
}

struct ParamSpec {
    name: &'static str,
    shape: Vec<usize>,
    trainable: bool,
}

impl LayerSpec {
    fn param_specs(&self) -> Vec<ParamSpec> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                ParamSpec {
                    name: "weight",
                    shape: vec![out_channels, in_channels, kernel, kernel],
                    trainable: true,
                },
                ParamSpec {
                    name: "bias",
                    shape: vec![out_channels],
                    trainable: true,
                },
            ],
            LayerSpec::Dense { inputs, outputs } => vec![
                ParamSpec {
                    name: "weight",
                    shape: vec![outputs, inputs],
                    trainable: true,
                },
                ParamSpec {
                    name: "bias",
                    shape: vec![outputs],
                    trainable: true,
                },
            ],
            LayerSpec::BatchNorm { channels, .. } => ["gamma", "beta", "mean", "var"]
                .into_iter()
                .map(|name| ParamSpec {
                    name,
                    shape: vec![channels],
                    trainable: name == "gamma" || name == "beta",
                })
                .collect(),
            _ => Vec::new(),
        }
    }

    fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let &[c, h, w] = input else {
                    return Err(format!("needs a [C, H, W] input, got {input:?}"));
                };
                if c != in_channels {
                    return Err(format!("needs {in_channels} input channels, got {input:?}"));
                }
                if kernel == 0 || stride == 0 {
                    return Err("kernel and stride must be positive".into());
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(format!("kernel {kernel} does not fit input {input:?}"));
                }
                Ok(vec![
                    out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool2x2 => {
                let &[c, h, w] = input else {
                    return Err(format!("needs a [C, H, W] input, got {input:?}"));
                };
                if h < 2 || w < 2 {
                    return Err(format!("input {input:?} is too small to pool"));
                }
                Ok(vec![c, h / 2, w / 2])
            }
            LayerSpec::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(format!("expects [{inputs}] but receives {input:?}"));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::BatchNorm { channels, .. } => match input {
                [c, _, _] | [c] if *c == channels => Ok(input.to_vec()),
                _ => Err(format!("expects {channels} channels but receives {input:?}")),
            },
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return Err(format!("needs a flat input, got {input:?}"));
                }
                Ok(input.to_vec())
            }
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => write!(
                f,
                "conv2d {in_channels}->{out_channels} k{kernel} s{stride} p{padding}"
            ),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::MaxPool2x2 => write!(f, "maxpool2x2"),
            LayerSpec::Dense { inputs, outputs } => write!(f, "dense {inputs}->{outputs}"),
            LayerSpec::Flatten => write!(f, "flatten"),
            LayerSpec::BatchNorm { channels, .. } => write!(f, "batchnorm {channels}"),
            LayerSpec::Softmax => write!(f, "softmax"),
        }
    }
}

/// Architecture description, stored as a JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    #[serde(default)]
    pub name: String,
    pub input_shape: Vec<usize>,
    pub class_count: usize,
    /// Declared parameter total; checked against the layers when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
    pub layers: Vec<LayerSpec>,
}

impl ArchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("architecture config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("architecture config serializes")
    }
}

/// Post-activation values of the requested layers, keyed by layer id.
#[derive(Clone, Debug, Default)]
pub struct ForwardTrace {
    layers: BTreeMap<usize, Tensor>,
}

impl ForwardTrace {
    pub fn get(&self, layer: usize) -> Option<&Tensor> {
        self.layers.get(&layer)
    }

    pub fn layer_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub probs: Tensor,
    pub trace: ForwardTrace,
}

/// Per-layer parameter gradients, laid out like [`Network::params`].
pub type ParamGrads = Vec<Vec<Vec<f32>>>;

/// Activations retained by a forward pass for back-propagation.
struct Pass {
    n: usize,
    /// `acts[0]` is the normalized input; `acts[i + 1]` is the output of layer `i`.
    acts: Vec<Vec<f32>>,
    argmax: Vec<Option<Vec<u32>>>,
}

/// A shape-checked feed-forward network with its weights.
///
/// Immutable once built; every inference and gradient method takes `&self`
/// and may be called from several threads at once.
#[derive(Clone, Debug)]
pub struct Network {
    config: ArchConfig,
    /// Output extents of each layer, for one item.
    shapes: Vec<Vec<usize>>,
    params: Vec<Vec<Tensor>>,
}

impl Network {
    /// Builds a network with He-uniform weights drawn from `seed`.
    pub fn build(config: &ArchConfig, seed: u64) -> Result<Self> {
        let shapes = infer_shapes(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(config.layers.len());
        for layer in &config.layers {
            let fan_in = match *layer {
                LayerSpec::Conv2d {
                    in_channels,
                    kernel,
                    ..
                } => in_channels * kernel * kernel,
                LayerSpec::Dense { inputs, .. } => inputs,
                _ => 0,
            };
            let tensors = layer
                .param_specs()
                .into_iter()
                .map(|spec| {
                    let mut t = Tensor::zeros(spec.shape);
                    match spec.name {
                        "weight" => {
                            let bound = (6.0 / fan_in as f64).sqrt() as f32;
                            for v in t.data_mut() {
                                *v = rng.gen_range(-bound..bound);
                            }
                        }
                        "gamma" | "var" => t.data_mut().fill(1.0),
                        _ => {}
                    }
                    t
                })
                .collect();
            params.push(tensors);
        }
        Ok(Network {
            config: config.clone(),
            shapes,
            params,
        })
    }

    /// Builds a network whose every parameter is zero (batch-norm variances
    /// are one so the layer stays finite).
    pub fn zeroed(config: &ArchConfig) -> Result<Self> {
        let mut net = Network::build(config, 0)?;
        for (layer, tensors) in config.layers.iter().zip(&mut net.params) {
            for (spec, t) in layer.param_specs().iter().zip(tensors.iter_mut()) {
                let fill = if spec.name == "var" { 1.0 } else { 0.0 };
                t.data_mut().fill(fill);
            }
        }
        Ok(net)
    }

    /// Assembles a network from explicit per-layer parameters.
    pub fn from_params(config: &ArchConfig, params: Vec<Vec<Tensor>>) -> Result<Self> {
        let shapes = infer_shapes(config)?;
        if params.len() != config.layers.len() {
            return Err(Error::Shape(format!(
                "{} parameter groups for {} layers",
                params.len(),
                config.layers.len()
            )));
        }
        for (i, (layer, tensors)) in config.layers.iter().zip(&params).enumerate() {
            let specs = layer.param_specs();
            if specs.len() != tensors.len() {
                return Err(Error::Shape(format!(
                    "layer {i} ({layer}) takes {} tensors, got {}",
                    specs.len(),
                    tensors.len()
                )));
            }
            for (spec, t) in specs.iter().zip(tensors) {
                if t.shape() != spec.shape.as_slice() {
                    return Err(Error::Shape(format!(
                        "layer {i} ({layer}) {} expects {:?}, got {:?}",
                        spec.name,
                        spec.shape,
                        t.shape()
                    )));
                }
            }
        }
        Ok(Network {
            config: config.clone(),
            shapes,
            params,
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.config.layers
    }

    pub fn depth(&self) -> usize {
        self.config.layers.len()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.config.input_shape
    }

    pub fn class_count(&self) -> usize {
        self.config.class_count
    }

    /// Output extents of layer `layer` for a single item.
    pub fn layer_shape(&self, layer: usize) -> &[usize] {
        &self.shapes[layer]
    }

    /// Number of scalar nodes in layer `layer`'s output.
    pub fn layer_size(&self, layer: usize) -> usize {
        self.shapes[layer].iter().product()
    }

    /// Layers whose output is post-activation: drops conv, dense and batch
    /// norm outputs that still pass through batch norm into a ReLU or softmax.
    pub fn tappable_layers(&self) -> Vec<usize> {
        let layers = &self.config.layers;
        let pre_activation = |l: usize| {
            matches!(layers[l], LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. } | LayerSpec::BatchNorm { .. })
                && matches!(
                    layers[l + 1..].iter().find(|n| !matches!(n, LayerSpec::BatchNorm { .. })),
                    Some(LayerSpec::Relu | LayerSpec::Softmax)
                )
        };
        (0..layers.len()).filter(|&l| !pre_activation(l)).collect()
    }

    /// Id of the last layer; its nodes are read as class probabilities.
    pub fn output_layer(&self) -> usize {
        self.depth() - 1
    }

    fn has_softmax(&self) -> bool {
        matches!(self.config.layers.last(), Some(LayerSpec::Softmax))
    }

    /// Number of layers evaluated before the logits are available.
    fn logit_layers(&self) -> usize {
        if self.has_softmax() {
            self.depth() - 1
        } else {
            self.depth()
        }
    }

    pub fn count_parameters(&self) -> usize {
        self.params.iter().flatten().map(Tensor::len).sum()
    }

    pub fn params(&self) -> &[Vec<Tensor>] {
        &self.params
    }

    /// Parameter tensors with their container names, in layer order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (layer, tensors)) in self.config.layers.iter().zip(&self.params).enumerate() {
            for (spec, t) in layer.param_specs().iter().zip(tensors) {
                out.push((format!("layer{i}.{}", spec.name), t));
            }
        }
        out
    }

    pub(crate) fn trainable_mask(&self) -> Vec<Vec<bool>> {
        self.config
            .layers
            .iter()
            .map(|l| l.param_specs().iter().map(|s| s.trainable).collect())
            .collect()
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Vec<Tensor>] {
        &mut self.params
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let n = batch.batch_len();
        if batch.rank() != self.config.input_shape.len() + 1
            || batch.item_shape() != self.config.input_shape.as_slice()
            || n == 0
        {
            return Err(Error::Shape(format!(
                "batch {:?} does not match input shape [N >= 1, {:?}]",
                batch.shape(),
                self.config.input_shape
            )));
        }
        if !batch.is_finite() {
            return Err(Error::NonFinite("input batch contains NaN or infinity".into()));
        }
        Ok(n)
    }

    fn normalize_input(&self, x: &[f32]) -> Vec<f32> {
        let mut out = x.to_vec();
        if let Some(norm) = &self.config.normalization {
            let channels = norm.mean.len();
            let plane = self.config.input_shape.iter().skip(1).product::<usize>();
            for item in out.chunks_exact_mut(channels * plane) {
                for (c, chunk) in item.chunks_exact_mut(plane).enumerate() {
                    let (m, s) = (norm.mean[c], norm.std[c]);
                    for v in chunk {
                        *v = (*v - m) / s;
                    }
                }
            }
        }
        out
    }

    fn run(&self, x: &[f32], n: usize, layer_count: usize) -> Pass {
        let mut acts = Vec::with_capacity(layer_count + 1);
        let mut argmax = vec![None; layer_count];
        acts.push(self.normalize_input(x));
        let mut in_shape = self.config.input_shape.clone();
        for i in 0..layer_count {
            let input = &acts[i];
            let out_shape = &self.shapes[i];
            let out_len: usize = out_shape.iter().product();
            let params = &self.params[i];
            let out = match self.config.layers[i] {
                LayerSpec::Conv2d {
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    let g = conv_geom(&in_shape, out_shape, kernel, stride, padding);
                    let mut out = vec![0.0; n * out_len];
                    ops::conv_forward(&g, n, input, params[0].data(), params[1].data(), &mut out);
                    out
                }
                LayerSpec::Relu => input.iter().map(|v| v.max(0.0)).collect(),
                LayerSpec::MaxPool2x2 => {
                    let mut out = vec![0.0; n * out_len];
                    let mut idx = vec![0u32; n * out_len];
                    ops::maxpool_forward(
                        n,
                        in_shape[0],
                        in_shape[1],
                        in_shape[2],
                        input,
                        &mut out,
                        &mut idx,
                    );
                    argmax[i] = Some(idx);
                    out
                }
                LayerSpec::Dense { inputs, outputs } => {
                    let mut out = vec![0.0; n * outputs];
                    ops::dense_forward(
                        n,
                        inputs,
                        outputs,
                        input,
                        params[0].data(),
                        params[1].data(),
                        &mut out,
                    );
                    out
                }
                LayerSpec::Flatten => input.clone(),
                LayerSpec::BatchNorm { eps, .. } => {
                    let mut out = input.clone();
                    let (scale, shift) = bn_affine(params, eps);
                    let plane = in_shape.iter().skip(1).product::<usize>();
                    for item in out.chunks_exact_mut(out_len) {
                        for (c, chunk) in item.chunks_exact_mut(plane).enumerate() {
                            for v in chunk {
                                *v = *v * scale[c] + shift[c];
                            }
                        }
                    }
                    out
                }
                LayerSpec::Softmax => {
                    let mut out = vec![0.0; n * out_len];
                    ops::softmax_rows(input, out_len, &mut out);
                    out
                }
            };
            acts.push(out);
            in_shape = out_shape.clone();
        }
        Pass { n, acts, argmax }
    }

    /// Forward propagation of a `[N, C, H, W]` batch.
    ///
    /// `taps` lists the layer ids whose post-activation outputs are returned
    /// in the trace. Probabilities are the softmax of the logits.
    pub fn forward(&self, batch: &Tensor, taps: &[usize]) -> Result<ForwardOutput> {
        let n = self.check_batch(batch)?;
        for &t in taps {
            if t >= self.depth() {
                return Err(Error::InvalidArgument(format!(
                    "tap layer {t} does not exist (network has {} layers)",
                    self.depth()
                )));
            }
        }
        let mut pass = self.run(batch.data(), n, self.logit_layers());
        let classes = self.class_count();
        let logits = pass.acts[self.logit_layers()].clone();
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network produced non-finite logits".into()));
        }
        let mut probs = vec![0.0; logits.len()];
        ops::softmax_rows(&logits, classes, &mut probs);
        let mut trace = ForwardTrace::default();
        for &t in taps {
            if trace.layers.contains_key(&t) {
                continue;
            }
            let values = if t >= self.logit_layers() {
                probs.clone()
            } else {
                std::mem::take(&mut pass.acts[t + 1])
            };
            let mut shape = vec![n];
            shape.extend_from_slice(&self.shapes[t]);
            trace.layers.insert(t, Tensor::new(shape, values)?);
        }
        Ok(ForwardOutput {
            logits: Tensor::new(vec![n, classes], logits)?,
            probs: Tensor::new(vec![n, classes], probs)?,
            trace,
        })
    }

    /// Arg-max class per image.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let out = self.forward(batch, &[])?;
        Ok(argmax_rows(out.logits.data(), self.class_count()))
    }

    fn backward(&self, pass: &Pass, dlogits: Vec<f32>, mut grads: Option<&mut ParamGrads>) -> Vec<f32> {
        let n = pass.n;
        let mut d = dlogits;
        for i in (0..self.logit_layers()).rev() {
            let in_shape: &[usize] = if i == 0 {
                &self.config.input_shape
            } else {
                &self.shapes[i - 1]
            };
            let in_len: usize = in_shape.iter().product();
            let out_shape = &self.shapes[i];
            let out_len: usize = out_shape.iter().product();
            let input = &pass.acts[i];
            let params = &self.params[i];
            let layer_grads = grads.as_mut().map(|g| &mut g[i]);
            d = match self.config.layers[i] {
                LayerSpec::Conv2d {
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    let g = conv_geom(in_shape, out_shape, kernel, stride, padding);
                    let mut dx = vec![0.0; n * in_len];
                    let pg = layer_grads.map(|lg| {
                        let (w, b) = lg.split_at_mut(1);
                        (w[0].as_mut_slice(), b[0].as_mut_slice())
                    });
                    ops::conv_backward(&g, n, input, params[0].data(), &d, &mut dx, pg);
                    dx
                }
                LayerSpec::Relu => {
                    let out = &pass.acts[i + 1];
                    d.iter()
                        .zip(out)
                        .map(|(g, o)| if *o > 0.0 { *g } else { 0.0 })
                        .collect()
                }
                LayerSpec::MaxPool2x2 => {
                    let mut dx = vec![0.0; n * in_len];
                    let idx = pass.argmax[i].as_ref().expect("pool indices recorded");
                    ops::maxpool_backward(n, in_len, out_len, idx, &d, &mut dx);
                    dx
                }
                LayerSpec::Dense { inputs, outputs } => {
                    let mut dx = vec![0.0; n * inputs];
                    let pg = layer_grads.map(|lg| {
                        let (w, b) = lg.split_at_mut(1);
                        (w[0].as_mut_slice(), b[0].as_mut_slice())
                    });
                    ops::dense_backward(n, inputs, outputs, input, params[0].data(), &d, &mut dx, pg);
                    dx
                }
                LayerSpec::Flatten => d,
                LayerSpec::BatchNorm { eps, .. } => {
                    let (scale, _) = bn_affine(params, eps);
                    let plane = in_shape.iter().skip(1).product::<usize>();
                    let mut dx = d.clone();
                    if let Some(lg) = layer_grads {
                        let inv: Vec<f32> = params[3]
                            .data()
                            .iter()
                            .map(|v| 1.0 / (v + eps).sqrt())
                            .collect();
                        let mean = params[2].data();
                        for (item_d, item_x) in d.chunks_exact(out_len).zip(input.chunks_exact(in_len)) {
                            for c in 0..scale.len() {
                                for p in 0..plane {
                                    let k = c * plane + p;
                                    lg[0][c] += item_d[k] * (item_x[k] - mean[c]) * inv[c];
                                    lg[1][c] += item_d[k];
                                }
                            }
                        }
                    }
                    for item in dx.chunks_exact_mut(out_len) {
                        for (c, chunk) in item.chunks_exact_mut(plane).enumerate() {
                            for v in chunk {
                                *v *= scale[c];
                            }
                        }
                    }
                    dx
                }
                LayerSpec::Softmax => unreachable!("softmax is never back-propagated through"),
            };
        }
        if let Some(norm) = &self.config.normalization {
            let plane = self.config.input_shape.iter().skip(1).product::<usize>();
            for item in d.chunks_exact_mut(norm.std.len() * plane) {
                for (c, chunk) in item.chunks_exact_mut(plane).enumerate() {
                    for v in chunk {
                        *v /= norm.std[c];
                    }
                }
            }
        }
        d
    }

    fn check_labels(&self, labels: &[usize], n: usize) -> Result<()> {
        if labels.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {n} images",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= self.class_count()) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {} classes",
                self.class_count()
            )));
        }
        Ok(())
    }

    /// Summed cross-entropy of the batch together with the gradient of the
    /// loss with respect to the logits.
    fn loss_and_dlogits(&self, pass: &Pass, labels: &[usize]) -> (f64, Vec<f32>) {
        let classes = self.class_count();
        let logits = &pass.acts[self.logit_layers()];
        let mut probs = vec![0.0; logits.len()];
        ops::softmax_rows(logits, classes, &mut probs);
        let mut loss = 0.0f64;
        for (row, &y) in probs.chunks_exact_mut(classes).zip(labels) {
            loss -= (row[y].max(f32::MIN_POSITIVE) as f64).ln();
            row[y] -= 1.0;
        }
        (loss, probs)
    }

    /// Gradient of each image's cross-entropy loss with respect to its pixels.
    pub fn input_gradient(&self, batch: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let n = self.check_batch(batch)?;
        self.check_labels(labels, n)?;
        let pass = self.run(batch.data(), n, self.logit_layers());
        let (_, dlogits) = self.loss_and_dlogits(&pass, labels);
        let grad = self.backward(&pass, dlogits, None);
        finite_tensor(batch.shape().to_vec(), grad)
    }

    /// Gradient of one logit with respect to the pixels of a single image
    /// (`[C, H, W]` or `[1, C, H, W]`; the result has the same shape).
    pub fn logit_gradient(&self, image: &Tensor, class_index: usize) -> Result<Tensor> {
        if class_index >= self.class_count() {
            return Err(Error::InvalidArgument(format!(
                "class {class_index} out of range for {} classes",
                self.class_count()
            )));
        }
        let batch = self.as_single_batch(image)?;
        self.check_batch(&batch)?;
        let pass = self.run(batch.data(), 1, self.logit_layers());
        let mut seed = vec![0.0; self.class_count()];
        seed[class_index] = 1.0;
        let grad = self.backward(&pass, seed, None);
        finite_tensor(image.shape().to_vec(), grad)
    }

    /// Logits of a single image and the gradient of every logit with respect
    /// to its pixels, from one batched backward pass.
    pub fn logit_gradients(&self, image: &Tensor) -> Result<(Vec<f32>, Vec<Tensor>)> {
        let batch = self.as_single_batch(image)?;
        self.check_batch(&batch)?;
        let classes = self.class_count();
        let mut replicated = Vec::with_capacity(classes * batch.len());
        for _ in 0..classes {
            replicated.extend_from_slice(batch.data());
        }
        let pass = self.run(&replicated, classes, self.logit_layers());
        let logits = pass.acts[self.logit_layers()][..classes].to_vec();
        let mut seed = vec![0.0; classes * classes];
        for k in 0..classes {
            seed[k * classes + k] = 1.0;
        }
        let grad = self.backward(&pass, seed, None);
        let grads = grad
            .chunks_exact(batch.len())
            .map(|g| finite_tensor(image.shape().to_vec(), g.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok((logits, grads))
    }

    /// Summed cross-entropy over a batch and its gradient for every
    /// parameter tensor, laid out like [`Network::params`].
    pub fn parameter_gradients(&self, batch: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Vec<Tensor>>)> {
        let n = self.check_batch(batch)?;
        self.check_labels(labels, n)?;
        let (loss, grads) = self.loss_and_param_grads(batch.data(), labels);
        let tensors = grads
            .into_iter()
            .zip(&self.params)
            .map(|(gs, ps)| {
                gs.into_iter()
                    .zip(ps)
                    .map(|(g, p)| finite_tensor(p.shape().to_vec(), g))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((loss, tensors))
    }

    /// Summed loss and parameter gradients of a batch (used by the trainer).
    pub(crate) fn loss_and_param_grads(&self, batch: &[f32], labels: &[usize]) -> (f64, ParamGrads) {
        let n = labels.len();
        let pass = self.run(batch, n, self.logit_layers());
        let (loss, dlogits) = self.loss_and_dlogits(&pass, labels);
        let mut grads: ParamGrads = self
            .params
            .iter()
            .map(|ts| ts.iter().map(|t| vec![0.0; t.len()]).collect())
            .collect();
        self.backward(&pass, dlogits, Some(&mut grads));
        (loss, grads)
    }

    pub(crate) fn batch_loss(&self, batch: &[f32], labels: &[usize]) -> f64 {
        let pass = self.run(batch, labels.len(), self.logit_layers());
        self.loss_and_dlogits(&pass, labels).0
    }

    fn as_single_batch(&self, image: &Tensor) -> Result<Tensor> {
        if image.shape() == self.config.input_shape.as_slice() {
            let mut shape = vec![1];
            shape.extend_from_slice(image.shape());
            Tensor::new(shape, image.data().to_vec())
        } else if image.batch_len() == 1 {
            Ok(image.clone())
        } else {
            Err(Error::Shape(format!(
                "expected a single image of shape {:?}, got {:?}",
                self.config.input_shape,
                image.shape()
            )))
        }
    }
}

fn finite_tensor(shape: Vec<usize>, data: Vec<f32>) -> Result<Tensor> {
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("gradient is not finite".into()));
    }
    Tensor::new(shape, data)
}

fn bn_affine(params: &[Tensor], eps: f32) -> (Vec<f32>, Vec<f32>) {
    let (gamma, beta, mean, var) = (
        params[0].data(),
        params[1].data(),
        params[2].data(),
        params[3].data(),
    );
    let scale: Vec<f32> = gamma
        .iter()
        .zip(var)
        .map(|(g, v)| g / (v + eps).sqrt())
        .collect();
    let shift = beta
        .iter()
        .zip(mean)
        .zip(&scale)
        .map(|((b, m), s)| b - m * s)
        .collect();
    (scale, shift)
}

fn conv_geom(
    in_shape: &[usize],
    out_shape: &[usize],
    kernel: usize,
    stride: usize,
    padding: usize,
) -> ops::ConvGeom {
    ops::ConvGeom {
        in_c: in_shape[0],
        in_h: in_shape[1],
        in_w: in_shape[2],
        out_c: out_shape[0],
        out_h: out_shape[1],
        out_w: out_shape[2],
        kernel,
        stride,
        padding,
    }
}

fn infer_shapes(config: &ArchConfig) -> Result<Vec<Vec<usize>>> {
    if config.layers.is_empty() {
        return Err(Error::Config("architecture has no layers".into()));
    }
    if config.class_count == 0 {
        return Err(Error::Config("class_count must be positive".into()));
    }
    if let Some(norm) = &config.normalization {
        let channels = config.input_shape.first().copied().unwrap_or(0);
        if norm.mean.len() != channels || norm.std.len() != channels {
            return Err(Error::Config(format!(
                "normalization needs {channels} means and stds"
            )));
        }
        if norm.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
    }
    let mut shapes = Vec::with_capacity(config.layers.len());
    let mut current = config.input_shape.clone();
    for (i, layer) in config.layers.iter().enumerate() {
        if matches!(layer, LayerSpec::Softmax) && i + 1 != config.layers.len() {
            return Err(Error::Config(format!(
                "layer {i} (softmax) must be the final layer"
            )));
        }
        let out = layer.output_shape(&current).map_err(|why| {
            let producer = if i == 0 {
                format!("the input {:?}", config.input_shape)
            } else {
                format!("layer {} ({}) output {:?}", i - 1, config.layers[i - 1], current)
            };
            Error::Shape(format!("layer {i} ({layer}) {why}; it follows {producer}"))
        })?;
        shapes.push(out.clone());
        current = out;
    }
    if current != [config.class_count] {
        return Err(Error::Shape(format!(
            "final layer produces {current:?} but class_count is {}",
            config.class_count
        )));
    }
    let total: usize = config
        .layers
        .iter()
        .flat_map(|l| l.param_specs())
        .map(|s| s.shape.iter().product::<usize>())
        .sum();
    if let Some(declared) = config.parameter_count {
        if declared != total {
            return Err(Error::Config(format!(
                "config declares {declared} parameters but the layers hold {total}"
            )));
        }
    }
    Ok(shapes)
}

pub(crate) fn argmax_rows(values: &[f32], width: usize) -> Vec<usize> {
    values
        .chunks_exact(width)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
