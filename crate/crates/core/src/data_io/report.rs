use std::path::Path;

use serde::{Deserialize, Serialize};

use super::atomic_write;
use crate::error::{Error, Result};

/// One detector result: a (attack, segmentation, mode) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub attack: String,
    pub segmentation: String,
    pub mode: String,
    pub detector: String,
    pub dimension: usize,
    pub auc: f64,
    pub accuracy: f64,
    pub train_rows: usize,
    pub test_rows: usize,
    pub features_sha256: String,
}

pub const REPORT_HEADER: [&str; 10] = [
    "attack",
    "segmentation",
    "mode",
    "detector",
    "dimension",
    "auc",
    "accuracy",
    "train_rows",
    "test_rows",
    "features_sha256",
];

pub fn encode_report(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(REPORT_HEADER).map_err(fmt)?;
    for r in rows {
        w.serialize(r).map_err(fmt)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

pub fn decode_report(bytes: &[u8]) -> Result<Vec<ReportRow>> {
    let mut reader = csv::Reader::from_reader(bytes);
    let header = reader.headers().map_err(|e| Error::Format(e.to_string()))?;
    if header.iter().ne(REPORT_HEADER) {
        return Err(Error::Format(format!("not a report header: {header:?}")));
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Format(format!("report line {}: {e}", i + 2))))
        .collect()
}

pub fn write_report(path: impl AsRef<Path>, rows: &[ReportRow]) -> Result<()> {
    atomic_write(path.as_ref(), &encode_report(rows)?)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_report(&bytes)
}
