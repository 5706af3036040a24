use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::{json, Value};

use segloo_core::attacks::read_adversarial_set;
use segloo_core::attribution::{
    build_feature_datasets, select_taps, write_feature_dataset, ExtractOptions, ForwardCounter, LabeledGroup,
    SampleClass, TapMode,
};
use segloo_core::data_io::{sha256_file, sidecar_path, ImageBatch};
use segloo_core::segmentation::SegmentationMethod;
use segloo_core::{Error, Result};

use super::{file_stem, load_model, load_records, output_dir, slug};
use crate::settings::Settings;
use crate::GlobalArgs;

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[arg(long)]
    arch: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// CIFAR-10 file of benign images.
    #[arg(long)]
    benign: Option<PathBuf>,
    /// Adversarial set written by `attack`, repeatable.
    #[arg(long = "adversarial")]
    adversarial: Vec<String>,
    /// Segmentation cell, repeatable.
    #[arg(long = "segmentation")]
    segmentations: Vec<String>,
    /// Tap mode cell, repeatable: `1d`, `10d`, `multilayer:per_layer=200`.
    #[arg(long = "mode")]
    modes: Vec<String>,
    /// Shorthand for `--segmentation slic:n_segments=N`.
    #[arg(long)]
    n_segments: Option<usize>,
    /// First benign image to use.
    #[arg(long)]
    offset: Option<usize>,
    /// Benign images to use.
    #[arg(long)]
    limit: Option<usize>,
    /// Occluded images per forward call.
    #[arg(long)]
    chunk: Option<usize>,
    /// Drop adversarial images whose attack failed.
    #[arg(long)]
    successful_only: bool,
}

/// Positions recorded by `attack --manifest`, when present.
fn recorded_sources(path: &Path) -> Result<Option<Vec<u64>>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&side).map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
    let v: Value = serde_json::from_str(&text)?;
    Ok(match v.get("source_ids") {
        Some(ids) => Some(serde_json::from_value(ids.clone())?),
        None => None,
    })
}

pub fn run(global: &GlobalArgs, args: ExtractArgs) -> Result<()> {
    let mut s = Settings::load(global.config.as_deref(), "extract")?;
    let out = output_dir(&s.pick("out", global.out.clone(), PathBuf::from("out"))?)?;
    let workers: usize = s.pick("workers", global.workers, 1)?;
    let arch: PathBuf = s.pick("arch", args.arch, "configs/desk_cifar10.json".into())?;
    let weights: PathBuf = s.require("weights", args.weights)?;
    let benign: PathBuf = s.require("benign", args.benign)?;
    let adversarial = s.pick_list("adversarial", args.adversarial, &[])?;
    let mut seg_flags = args.segmentations;
    if let Some(n) = args.n_segments {
        seg_flags.push(format!("slic:n_segments={n}"));
    }
    let segmentations = s.pick_list("segmentation", seg_flags, &["per-pixel"])?;
    let modes = s.pick_list("mode", args.modes, &["1d"])?;
    let offset: usize = s.pick("offset", args.offset, 0)?;
    let limit: Option<usize> = s.pick_opt("limit", args.limit)?;
    let chunk: usize = s.pick("chunk", args.chunk, 128)?;
    let successful_only: bool = s.pick("successful_only", args.successful_only.then_some(true), false)?;

    let segmentations = segmentations
        .iter()
        .map(|m| SegmentationMethod::parse(m))
        .collect::<Result<Vec<_>>>()?;
    let modes = modes.iter().map(|m| TapMode::parse(m)).collect::<Result<Vec<_>>>()?;
    if adversarial.is_empty() {
        return Err(Error::Config("extract needs at least one --adversarial set".into()));
    }

    let model = load_model(&arch, &weights)?;
    let (records, mut ids) = load_records(&benign, offset, limit)?;
    if let Some(recorded) = recorded_sources(&benign)? {
        if recorded.len() < offset + records.len() {
            return Err(Error::Format(format!("{}: sidecar lists too few source ids", benign.display())));
        }
        ids = recorded[offset..offset + records.len()].to_vec();
    }
    let benign_batch = ImageBatch::from_records(&records, ids)?;
    let benign_name = file_stem(&benign);

    let mut adv_batches = Vec::new();
    for path in &adversarial {
        let mut set = read_adversarial_set(path)?;
        if !set.meta.weights_sha256.is_empty() && set.meta.weights_sha256 != model.weights_sha256 {
            return Err(Error::Checksum {
                path: weights.clone(),
                expected: set.meta.weights_sha256.clone(),
                actual: model.weights_sha256.clone(),
            });
        }
        if successful_only {
            set = set.successful();
        }
        let batch = ImageBatch::from_records(&set.records, set.meta.source_ids.clone())?;
        adv_batches.push((file_stem(Path::new(path)), set.meta, batch));
    }

    let tapsets = modes
        .iter()
        .map(|m| select_taps(&model.net, m))
        .collect::<Result<Vec<_>>>()?;
    let opts = ExtractOptions {
        chunk,
        workers,
        retain: false,
    };
    let mut groups = vec![LabeledGroup {
        images: &benign_batch.images,
        ids: &benign_batch.source_ids,
        class: SampleClass::Benign,
        source: &benign_name,
        attack: "none",
        epsilons: &[],
    }];
    for (name, meta, batch) in &adv_batches {
        groups.push(LabeledGroup {
            images: &batch.images,
            ids: &batch.source_ids,
            class: SampleClass::Adversarial,
            source: name,
            attack: &meta.attack,
            epsilons: &meta.epsilons,
        });
    }
    let images: usize = groups.iter().map(|g| g.ids.len()).sum();
    let inputs: Vec<Value> = std::iter::once(benign.clone())
        .chain(adversarial.iter().map(PathBuf::from))
        .map(|p| Ok(json!({"path": p.display().to_string(), "sha256": sha256_file(&p)?})))
        .collect::<Result<_>>()?;

    for seg in &segmentations {
        let counter = ForwardCounter::new();
        let datasets = build_feature_datasets(&model.net, &groups, seg, &tapsets, &opts, &counter, &model.weights_sha256)?;
        let passes = counter.get();
        println!(
            "{seg}\timages={images}\tforward_passes={passes}\tper_image={:.2}",
            passes as f64 / images.max(1) as f64
        );
        for mut ds in datasets {
            ds.provenance.extra = json!({
                "stage": "extract",
                "settings": s.resolved(),
                "model": model.info,
                "inputs": inputs,
                "forward_passes": passes,
                "images": images,
            });
            let path = out.join(format!(
                "features-{}-{}.csv",
                slug(&seg.to_string()),
                slug(&ds.provenance.tap_mode)
            ));
            write_feature_dataset(&path, &ds)?;
            eprintln!("wrote {} ({} rows, d = {})", path.display(), ds.len(), ds.dimension);
        }
    }
    Ok(())
}
