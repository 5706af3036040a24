//! Benign-vs-adversarial classifiers over IQR feature vectors, and the AUC
//! used to score them.

mod gbt;
mod logistic;


use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{FeatureDataset, FeatureProvenance, SampleClass};
use crate::data_io::atomic_write;
use crate::error::{Error, Result};

pub use gbt::{train_gbt, GbtHyper, GbtModel, Tree, TreeNode};
pub use logistic::{logistic_loss_and_grad, train_logistic, LogisticHyper, LogisticModel, Standardizer};

/// Rows as a dense matrix plus 0/1 targets.
pub(crate) fn design(ds: &FeatureDataset) -> (Vec<Vec<f32>>, Vec<f64>) {
    let x = ds.rows.iter().map(|r| r.features.clone()).collect();
    let y = ds.rows.iter().map(|r| r.label.target()).collect();
    (x, y)
}

pub(crate) fn require_both_classes(ds: &FeatureDataset, what: &str) -> Result<()> {
    for class in [SampleClass::Benign, SampleClass::Adversarial] {
        if ds.count(class) == 0 {
            return Err(Error::InvalidArgument(format!("{what} has no {class} rows")));
        }
    }
    Ok(())
}

/// Stratified split: within each class, a seeded shuffle puts
/// `round(train_fraction · n_class)` rows (at least one, and leaving at
/// least one) into the training part. Both parts keep the dataset order.
pub fn split_train_test(ds: &FeatureDataset, train_fraction: f64, seed: u64) -> Result<(FeatureDataset, FeatureDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; ds.len()];
    for class in [SampleClass::Benign, SampleClass::Adversarial] {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.rows[i].label == class).collect();
        if idx.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 {class} rows to split, have {}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let take = ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        for &i in &idx[..take] {
            in_train[i] = true;
        }
    }
    let part = |want: bool| FeatureDataset {
        rows: ds
            .rows
            .iter()
            .zip(&in_train)
            .filter(|(_, &t)| t == want)
            .map(|(r, _)| r.clone())
            .collect(),
        dimension: ds.dimension,
        provenance: ds.provenance.clone(),
    };
    Ok((part(true), part(false)))
}

/// Area under the ROC curve: the probability that a random positive
/// outscores a random negative, ties counting one half. Computed from
/// mid-ranks in integer arithmetic.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN detector score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of the positives, ranks starting at 1.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean, (i + j + 2) / 2.
        let twice_mid = (i + j + 2) as u128;
        let positives = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        twice_rank_sum += twice_mid * positives;
        i = j + 1;
    }
    let twice_u = twice_rank_sum - pos * (pos + 1);
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DetectorModel {
    Logistic(LogisticModel),
    Gbt(GbtModel),
}

impl DetectorModel {
    pub fn kind(&self) -> &'static str {
        match self {
            DetectorModel::Logistic(_) => "logistic",
            DetectorModel::Gbt(_) => "gbt",
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            DetectorModel::Logistic(m) => m.dimension(),
            DetectorModel::Gbt(m) => m.dimension,
        }
    }

    /// Raw score; larger means more likely adversarial, 0 is the 0.5
    /// probability boundary.
    pub fn score(&self, features: &[f32]) -> f64 {
        match self {
            DetectorModel::Logistic(m) => m.score(features),
            DetectorModel::Gbt(m) => m.score(features),
        }
    }

    pub fn score_dataset(&self, ds: &FeatureDataset) -> Result<Vec<f64>> {
        if ds.dimension != self.dimension() {
            return Err(Error::Shape(format!(
                "{} detector expects {} features, dataset has {}",
                self.kind(),
                self.dimension(),
                ds.dimension
            )));
        }
        Ok(ds.rows.iter().map(|r| self.score(&r.features)).collect())
    }
}

/// A trained model with the identity of the data it was fit on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedDetector {
    pub model: DetectorModel,
    /// SHA-256 of the feature CSV used for training.
    pub features_sha256: String,
    pub provenance: FeatureProvenance,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default)]
    pub train_fraction: f64,
}

impl TrainedDetector {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        atomic_write(path.as_ref(), format!("{text}\n").as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detector: String,
    pub auc: f64,
    /// Accuracy with the 0.5-probability threshold.
    pub accuracy: f64,
    pub benign: usize,
    pub adversarial: usize,
    pub dimension: usize,
    pub provenance: FeatureProvenance,
}

pub fn evaluate(model: &DetectorModel, test: &FeatureDataset) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    require_both_classes(test, "evaluation set")?;
    let scores = model.score_dataset(test)?;
    let labels: Vec<bool> = test.rows.iter().map(|r| r.label == SampleClass::Adversarial).collect();
    let correct = scores.iter().zip(&labels).filter(|(&s, &l)| (s >= 0.0) == l).count();
    Ok(EvalReport {
        detector: model.kind().to_owned(),
        auc: auc(&scores, &labels)?,
        accuracy: correct as f64 / test.len() as f64,
        benign: test.count(SampleClass::Benign),
        adversarial: test.count(SampleClass::Adversarial),
        dimension: test.dimension,
        provenance: test.provenance.clone(),
    })
}
