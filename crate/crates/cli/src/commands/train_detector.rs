use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use segloo_core::attribution::read_feature_dataset;
use segloo_core::data_io::sha256_file;
use segloo_core::detector::{
    split_train_test, train_gbt, train_logistic, DetectorModel, GbtHyper, LogisticHyper, TrainedDetector,
};
use segloo_core::{Error, Result};

use super::{file_stem, output_dir, write_sidecar};
use crate::settings::Settings;
use crate::GlobalArgs;

#[derive(Args, Debug)]
pub struct TrainDetectorArgs {
    /// Feature CSV written by `extract`.
    #[arg(long)]
    features: Option<PathBuf>,
    /// `gbt` or `logistic`.
    #[arg(long)]
    detector: Option<String>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

pub fn run(global: &GlobalArgs, args: TrainDetectorArgs) -> Result<()> {
    let mut s = Settings::load(global.config.as_deref(), "train-detector")?;
    let out = output_dir(&s.pick("out", global.out.clone(), PathBuf::from("out"))?)?;
    let features: PathBuf = s.require("features", args.features)?;
    let kind: String = s.pick("detector", args.detector, "gbt".into())?;
    let train_fraction: f64 = s.pick("train_fraction", args.train_fraction, 0.8)?;
    let seed: u64 = s.pick("seed", global.seed, 0)?;

    let model_of = |train: &_, s: &mut Settings| -> Result<DetectorModel> {
        match kind.as_str() {
            "gbt" => {
                let d = GbtHyper::default();
                let hyper = GbtHyper {
                    trees: s.pick("trees", args.trees, d.trees)?,
                    depth: s.pick("depth", args.depth, d.depth)?,
                    lr: s.pick("lr", args.lr, d.lr)?,
                    seed,
                    ..d
                };
                Ok(DetectorModel::Gbt(train_gbt(train, &hyper)?))
            }
            "logistic" => {
                let d = LogisticHyper::default();
                let hyper = LogisticHyper {
                    lr: s.pick("lr", args.lr, d.lr)?,
                    epochs: s.pick("epochs", args.epochs, d.epochs)?,
                    ..d
                };
                Ok(DetectorModel::Logistic(train_logistic(train, &hyper)?))
            }
            other => Err(Error::Config(format!("unknown detector {other:?}; expected gbt or logistic"))),
        }
    };

    let ds = read_feature_dataset(&features)?;
    let (train, test) = split_train_test(&ds, train_fraction, seed)?;
    let model = model_of(&train, &mut s)?;
    let trained = TrainedDetector {
        model,
        features_sha256: sha256_file(&features)?,
        provenance: ds.provenance.clone(),
        split_seed: seed,
        train_fraction,
    };
    let path = out.join(format!("{}.{kind}.json", file_stem(&features)));
    trained.save(&path)?;
    write_sidecar(
        &path,
        &json!({
            "stage": "train-detector",
            "settings": s.resolved(),
            "features": features.display().to_string(),
            "features_sha256": trained.features_sha256,
            "train_rows": train.len(),
            "test_rows": test.len(),
        }),
    )?;
    println!("{}", path.display());
    Ok(())
}
