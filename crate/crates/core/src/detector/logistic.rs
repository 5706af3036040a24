use serde::{Deserialize, Serialize};

use super::{design, require_both_classes};
use crate::attribution::FeatureDataset;
use crate::error::{Error, Result};

/// Per-feature affine map to zero mean and unit variance, fit on training
/// rows. Constant features keep scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f32>], dimension: usize) -> Self {
        let n = x.len().max(1) as f64;
        let mut means = vec![0.0; dimension];
        for row in x {
            for (m, &v) in means.iter_mut().zip(row) {
                *m += v as f64;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut scales = vec![0.0; dimension];
        for row in x {
            for ((s, &v), m) in scales.iter_mut().zip(row).zip(&means) {
                *s += (v as f64 - m).powi(2);
            }
        }
        for s in &mut scales {
            *s = (*s / n).sqrt();
            if !(*s > 1e-12) {
                *s = 1.0;
            }
        }
        Standardizer { means, scales }
    }

    pub fn apply(&self, row: &[f32]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(&v, (m, s))| (v as f64 - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticHyper {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LogisticHyper {
    fn default() -> Self {
        LogisticHyper {
            lr: 0.5,
            epochs: 300,
            l2: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardizer: Standardizer,
    pub hyper: LogisticHyper,
    /// Training loss before the first and after the last epoch.
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl LogisticModel {
    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, features: &[f32]) -> f64 {
        let z = self.standardizer.apply(features);
        self.bias + z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// `log(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss plus `l2/2 · |w|²`, with its gradient in `w` and `b`.
pub fn logistic_loss_and_grad(w: &[f64], b: f64, x: &[Vec<f64>], y: &[f64], l2: f64) -> (f64, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (row, &t) in x.iter().zip(y) {
        let z = b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        // -[t log σ(z) + (1-t) log(1-σ(z))] = softplus(z) - t z
        loss += softplus(z) - t * z;
        let d = sigmoid(z) - t;
        for (g, a) in gw.iter_mut().zip(row) {
            *g += d * a;
        }
        gb += d;
    }
    loss /= n;
    gb /= n;
    for (g, wi) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * wi;
    }
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    (loss, gw, gb)
}

/// Full-batch gradient descent on standardized features.
pub fn train_logistic(train: &FeatureDataset, hyper: &LogisticHyper) -> Result<LogisticModel> {
    require_both_classes(train, "training set")?;
    if !(hyper.lr > 0.0) || hyper.epochs == 0 || !(hyper.l2 >= 0.0) {
        return Err(Error::Config(format!("bad logistic hyperparameters {hyper:?}")));
    }
    let (raw, y) = design(train);
    let standardizer = Standardizer::fit(&raw, train.dimension);
    let x: Vec<Vec<f64>> = raw.iter().map(|r| standardizer.apply(r)).collect();
    let mut w = vec![0.0; train.dimension];
    let mut b = 0.0;
    let (initial_loss, mut gw, mut gb) = logistic_loss_and_grad(&w, b, &x, &y, hyper.l2);
    let mut loss = initial_loss;
    for _ in 0..hyper.epochs {
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= hyper.lr * g;
        }
        b -= hyper.lr * gb;
        (loss, gw, gb) = logistic_loss_and_grad(&w, b, &x, &y, hyper.l2);
    }
    if !loss.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logistic regression diverged".into()));
    }
    Ok(LogisticModel {
        weights: w,
        bias: b,
        standardizer,
        hyper: *hyper,
        initial_loss,
        final_loss: loss,
    })
}
