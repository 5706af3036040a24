//! IQR feature files: a CSV with one row per image and a JSON provenance
//! sidecar.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data_io::{atomic_write, sidecar_path};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleClass {
    Benign,
    Adversarial,
}

impl SampleClass {
    /// Detector target: 1 for adversarial.
    pub fn target(self) -> f64 {
        match self {
            SampleClass::Benign => 0.0,
            SampleClass::Adversarial => 1.0,
        }
    }
}

impl fmt::Display for SampleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleClass::Benign => "benign",
            SampleClass::Adversarial => "adversarial",
        })
    }
}

impl FromStr for SampleClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "benign" => Ok(SampleClass::Benign),
            "adversarial" => Ok(SampleClass::Adversarial),
            other => Err(Error::Format(format!("unknown sample label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub image_id: u64,
    /// Where the underlying image came from, e.g. `test:1234`.
    pub source: String,
    /// Attack name, `none` for benign rows.
    pub attack: String,
    pub epsilon: f32,
    pub label: SampleClass,
    pub features: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureProvenance {
    pub segmentation: String,
    pub tap_mode: String,
    #[serde(default)]
    pub tap_seed: Option<u64>,
    #[serde(default)]
    pub weights_sha256: String,
    pub dimension: usize,
    /// Anything else a producer wants to keep (settings, counts).
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// IQR vectors with benign/adversarial labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub rows: Vec<FeatureRow>,
    pub dimension: usize,
    pub provenance: FeatureProvenance,
}

impl FeatureDataset {
    pub fn new(rows: Vec<FeatureRow>, dimension: usize, provenance: FeatureProvenance) -> Result<Self> {
        if let Some(bad) = rows.iter().find(|r| r.features.len() != dimension) {
            return Err(Error::Shape(format!(
                "row for image {} has {} features, dataset dimension is {dimension}",
                bad.image_id,
                bad.features.len()
            )));
        }
        Ok(FeatureDataset {
            rows,
            dimension,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn count(&self, class: SampleClass) -> usize {
        self.rows.iter().filter(|r| r.label == class).count()
    }

    /// Rows selected by `keep`, same dimension and provenance.
    pub fn filter(&self, keep: impl Fn(&FeatureRow) -> bool) -> FeatureDataset {
        FeatureDataset {
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
            dimension: self.dimension,
            provenance: self.provenance.clone(),
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

pub fn encode_feature_csv(rows: &[FeatureRow], dimension: usize) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["image_id", "source", "attack", "epsilon", "label"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..dimension).map(|j| format!("f{j}")));
    let to_format = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(&header).map_err(to_format)?;
    for r in rows {
        if r.features.len() != dimension {
            return Err(Error::Shape(format!(
                "row for image {} has {} features, expected {dimension}",
                r.image_id,
                r.features.len()
            )));
        }
        let mut fields = vec![
            r.image_id.to_string(),
            r.source.clone(),
            r.attack.clone(),
            r.epsilon.to_string(),
            r.label.to_string(),
        ];
        fields.extend(r.features.iter().map(|v| v.to_string()));
        w.write_record(&fields).map_err(to_format)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

pub fn write_feature_csv(path: impl AsRef<Path>, rows: &[FeatureRow], dimension: usize) -> Result<()> {
    atomic_write(path.as_ref(), &encode_feature_csv(rows, dimension)?)
}

/// Rows and feature dimension of a feature CSV.
pub fn read_feature_csv(path: impl AsRef<Path>) -> Result<(Vec<FeatureRow>, usize)> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let fixed = ["image_id", "source", "attack", "epsilon", "label"];
    if header.len() < fixed.len() || header.iter().zip(fixed).any(|(h, f)| h != f) {
        return Err(Error::Format(format!("{}: not a feature CSV header", path.display())));
    }
    let dimension = header.len() - fixed.len();
    for (j, h) in header.iter().skip(fixed.len()).enumerate() {
        if h != format!("f{j}") {
            return Err(Error::Format(format!("{}: unexpected column {h:?}", path.display())));
        }
    }
    let bad = |line: usize, what: &str| Error::Format(format!("{}: line {line}: bad {what}", path.display()));
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        let features = rec
            .iter()
            .skip(fixed.len())
            .map(|v| v.parse::<f32>().map_err(|_| bad(line, "feature value")))
            .collect::<Result<Vec<_>>>()?;
        rows.push(FeatureRow {
            image_id: rec[0].parse().map_err(|_| bad(line, "image_id"))?,
            source: rec[1].to_owned(),
            attack: rec[2].to_owned(),
            epsilon: rec[3].parse().map_err(|_| bad(line, "epsilon"))?,
            label: rec[4].parse()?,
            features,
        });
    }
    Ok((rows, dimension))
}

/// Writes the CSV and its `.provenance.json` sidecar.
pub fn write_feature_dataset(path: impl AsRef<Path>, ds: &FeatureDataset) -> Result<()> {
    let path = path.as_ref();
    write_feature_csv(path, &ds.rows, ds.dimension)?;
    let text = serde_json::to_string_pretty(&ds.provenance)?;
    atomic_write(&sidecar_path(path), format!("{text}\n").as_bytes())
}

pub fn read_feature_dataset(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    let path = path.as_ref();
    let (rows, dimension) = read_feature_csv(path)?;
    let side = sidecar_path(path);
    let provenance: FeatureProvenance = match std::fs::read_to_string(&side) {
        Ok(text) => serde_json::from_str(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => FeatureProvenance {
            dimension,
            ..FeatureProvenance::default()
        },
        Err(e) => return Err(Error::io(side, e)),
    };
    if provenance.dimension != dimension {
        return Err(Error::Shape(format!(
            "{}: provenance says dimension {}, CSV has {dimension}",
            path.display(),
            provenance.dimension
        )));
    }
    FeatureDataset::new(rows, dimension, provenance)
}
