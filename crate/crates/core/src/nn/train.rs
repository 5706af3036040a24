//! Mini-batch SGD with momentum on the summed-then-averaged cross-entropy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labelled images that the trainer can draw mini-batches from.
pub trait TrainingData: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes image `index` (canonical `[0, 1]` range) into `out` and returns its label.
    fn fill(&self, index: usize, out: &mut [f32]) -> usize;
}

/// In-memory images with labels.
#[derive(Clone, Debug)]
pub struct LabeledImages {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl TrainingData for LabeledImages {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn fill(&self, index: usize, out: &mut [f32]) -> usize {
        out.copy_from_slice(self.images.item(index));
        self.labels[index]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f32,
    pub momentum: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// L2 penalty on weight tensors (not biases or batch-norm parameters).
    #[serde(default)]
    pub weight_decay: f32,
    /// Multiplies the learning rate after every epoch.
    #[serde(default = "one")]
    pub lr_decay: f32,
}

fn one() -> f32 {
    1.0
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 0.01,
            momentum: 0.9,
            epochs: 1,
            batch_size: 64,
            seed: 0,
            weight_decay: 0.0,
            lr_decay: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Running mean of the mini-batch losses seen during each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Mean cross-entropy of `net` over every item of `data`.
pub fn mean_loss(net: &Network, data: &dyn TrainingData) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let item_len: usize = net.input_shape().iter().product();
    let chunk = 256;
    let mut total = 0.0;
    let mut buf = Vec::new();
    let mut labels = Vec::new();
    let mut start = 0;
    while start < data.len() {
        let end = (start + chunk).min(data.len());
        buf.resize((end - start) * item_len, 0.0);
        labels.clear();
        for (slot, i) in (start..end).enumerate() {
            labels.push(data.fill(i, &mut buf[slot * item_len..(slot + 1) * item_len]));
        }
        total += net.batch_loss(&buf, &labels);
        start = end;
    }
    Ok(total / data.len() as f64)
}

/// Fraction of `data` whose arg-max prediction matches the label.
pub fn accuracy(net: &Network, data: &dyn TrainingData) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let item_shape = net.input_shape().to_vec();
    let item_len: usize = item_shape.iter().product();
    let mut correct = 0usize;
    let mut start = 0;
    while start < data.len() {
        let end = (start + 256).min(data.len());
        let mut buf = vec![0.0f32; (end - start) * item_len];
        let labels: Vec<usize> = (start..end)
            .zip(buf.chunks_exact_mut(item_len))
            .map(|(i, out)| data.fill(i, out))
            .collect();
        let mut shape = vec![end - start];
        shape.extend(&item_shape);
        let pred = net.predict(&Tensor::new(shape, buf)?)?;
        correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
        start = end;
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains a copy of `net`; the input network is left untouched.
///
/// `progress` is called after every epoch with the epoch index and its
/// running mean loss.
pub fn train(
    net: &Network,
    data: &dyn TrainingData,
    hyper: &TrainHyper,
    mut progress: Option<&mut dyn FnMut(usize, f64)>,
) -> Result<(Network, TrainReport)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    if hyper.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if !(hyper.lr >= 0.0 && hyper.lr.is_finite()) {
        return Err(Error::Config(format!("learning rate {} is invalid", hyper.lr)));
    }
    let mut net = net.clone();
    let trainable = net.trainable_mask();
    let decay_mask: Vec<Vec<bool>> = net
        .params()
        .iter()
        .enumerate()
        .map(|(i, ts)| {
            (0..ts.len())
                .map(|j| {
                    matches!(
                        (&net.layers()[i], j),
                        (super::LayerSpec::Conv2d { .. }, 0) | (super::LayerSpec::Dense { .. }, 0)
                    )
                })
                .collect()
        })
        .collect();
    let mut velocity: Vec<Vec<Vec<f32>>> = net
        .params()
        .iter()
        .map(|ts| ts.iter().map(|t| vec![0.0; t.len()]).collect())
        .collect();

    let item_len: usize = net.input_shape().iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    let mut lr = hyper.lr;
    let mut buf = vec![0.0f32; hyper.batch_size * item_len];
    let mut labels = Vec::with_capacity(hyper.batch_size);

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let n = batch.len();
            labels.clear();
            for (slot, &i) in batch.iter().enumerate() {
                labels.push(data.fill(i, &mut buf[slot * item_len..(slot + 1) * item_len]));
            }
            let (loss, grads) = net.loss_and_param_grads(&buf[..n * item_len], &labels);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss diverged at epoch {epoch}, step {}",
                    report.steps
                )));
            }
            loss_sum += loss;
            let scale = 1.0 / n as f32;
            for (i, tensors) in net.params_mut().iter_mut().enumerate() {
                for (j, t) in tensors.iter_mut().enumerate() {
                    if !trainable[i][j] {
                        continue;
                    }
                    let decay = if decay_mask[i][j] { hyper.weight_decay } else { 0.0 };
                    let v = &mut velocity[i][j];
                    for ((w, g), vel) in t.data_mut().iter_mut().zip(&grads[i][j]).zip(v.iter_mut()) {
                        let step = g * scale + decay * *w;
                        *vel = hyper.momentum * *vel - lr * step;
                        *w += *vel;
                    }
                }
            }
            report.steps += 1;
        }
        let epoch_loss = loss_sum / data.len() as f64;
        report.epoch_losses.push(epoch_loss);
        if let Some(cb) = progress.as_mut() {
            cb(epoch, epoch_loss);
        }
        lr *= hyper.lr_decay;
    }
    Ok((net, report))
}
