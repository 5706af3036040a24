use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use segloo_core::attribution::{read_feature_dataset, FeatureDataset, SampleClass};
use segloo_core::data_io::{sha256_file, ReportRow};
use segloo_core::detector::{evaluate, split_train_test, EvalReport, TrainedDetector};
use segloo_core::{Error, Result};

use super::{file_stem, output_dir, write_json};
use crate::settings::Settings;
use crate::GlobalArgs;

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Detector written by `train-detector`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// The feature CSV the detector was trained on; its held-out split is
    /// scored.
    #[arg(long)]
    features: Option<PathBuf>,
}

/// What `evaluate` writes and `report` reads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: EvalReport,
    pub row: ReportRow,
    pub settings: serde_json::Value,
}

impl Evaluation {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn attack_of(ds: &FeatureDataset) -> String {
    let names: BTreeSet<&str> = ds
        .rows
        .iter()
        .filter(|r| r.label == SampleClass::Adversarial)
        .map(|r| r.attack.as_str())
        .collect();
    names.into_iter().collect::<Vec<_>>().join("+")
}

pub fn run(global: &GlobalArgs, args: EvaluateArgs) -> Result<()> {
    let mut s = Settings::load(global.config.as_deref(), "evaluate")?;
    let out = output_dir(&s.pick("out", global.out.clone(), PathBuf::from("out"))?)?;
    let model_path: PathBuf = s.require("model", args.model)?;
    let features: PathBuf = s.require("features", args.features)?;

    let trained = TrainedDetector::load(&model_path)?;
    let actual = sha256_file(&features)?;
    if actual != trained.features_sha256 {
        return Err(Error::Checksum {
            path: features,
            expected: trained.features_sha256,
            actual,
        });
    }
    let ds = read_feature_dataset(&features)?;
    let (train, test) = split_train_test(&ds, trained.train_fraction, trained.split_seed)?;
    let report = evaluate(&trained.model, &test)?;
    let row = ReportRow {
        attack: attack_of(&ds),
        segmentation: ds.provenance.segmentation.clone(),
        mode: ds.provenance.tap_mode.clone(),
        detector: report.detector.clone(),
        dimension: report.dimension,
        auc: report.auc,
        accuracy: report.accuracy,
        train_rows: train.len(),
        test_rows: test.len(),
        features_sha256: trained.features_sha256.clone(),
    };
    println!(
        "{}\t{}\t{}\tauc={:.4}\taccuracy={:.4}",
        row.segmentation, row.mode, row.detector, row.auc, row.accuracy
    );
    let path = out.join(format!("{}.eval.json", file_stem(&model_path)));
    let eval = Evaluation {
        report,
        row,
        settings: s.resolved(),
    };
    write_json(&path, &serde_json::to_value(&eval)?)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}
