use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use segloo_core::attacks::{attack_records, write_adversarial_set, AttackSpec};
use segloo_core::data_io::{assemble_experiment, sha256_file, write_cifar10_file, ExperimentManifest, ImageBatch};
use segloo_core::{Error, Result};

use super::{file_stem, load_model, load_records, output_dir, write_sidecar};
use crate::settings::Settings;
use crate::GlobalArgs;

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[arg(long)]
    arch: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// CIFAR-10 binary file with the images to attack.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Attack cell, repeatable, e.g. `fgsm:eps=0.02,0.06,0.1`.
    #[arg(long = "attack")]
    attacks: Vec<String>,
    #[arg(long)]
    offset: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
    /// Keep only images the model classifies correctly before attacking.
    #[arg(long)]
    correct_only: bool,
    /// Images per attack batch; budgets are spread over batches.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Build benign and adversarial sets from an experiment manifest instead.
    #[arg(long, conflicts_with_all = ["images", "attacks", "arch", "weights"])]
    manifest: Option<PathBuf>,
}

pub fn run(global: &GlobalArgs, args: AttackArgs) -> Result<()> {
    let mut s = Settings::load(global.config.as_deref(), "attack")?;
    let out = output_dir(&s.pick("out", global.out.clone(), PathBuf::from("out"))?)?;
    let workers: usize = s.pick("workers", global.workers, 1)?;
    if let Some(path) = s.pick_opt("manifest", args.manifest)? {
        return from_manifest(&path, &out, workers, &s);
    }
    let arch: PathBuf = s.pick("arch", args.arch, "configs/desk_cifar10.json".into())?;
    let weights: PathBuf = s.require("weights", args.weights)?;
    let images: PathBuf = s.require("images", args.images)?;
    let specs = s.pick_list("attack", args.attacks, &["fgsm:eps=0.02,0.06,0.1"])?;
    let offset: usize = s.pick("offset", args.offset, 0)?;
    let limit: Option<usize> = s.pick_opt("limit", args.limit)?;
    let correct_only: bool = s.pick("correct_only", args.correct_only.then_some(true), false)?;
    let batch_size: usize = s.pick("batch_size", args.batch_size, 128)?;
    let seed: Option<u64> = s.pick_opt("seed", global.seed)?;

    let specs = specs
        .iter()
        .map(|t| {
            let mut spec = AttackSpec::parse(t)?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            Ok(spec)
        })
        .collect::<Result<Vec<_>>>()?;
    let methods: BTreeSet<String> = specs.iter().map(|s| s.method.to_string()).collect();
    if methods.len() != specs.len() {
        return Err(Error::Config("one --attack per method; outputs are named after the method".into()));
    }

    let model = load_model(&arch, &weights)?;
    let (mut records, mut ids) = load_records(&images, offset, limit)?;
    if correct_only {
        let batch = ImageBatch::from_records(&records, ids.clone())?;
        let predicted = model.net.predict(&batch.images)?;
        let keep: Vec<bool> = predicted.iter().zip(&batch.labels).map(|(p, l)| p == l).collect();
        let mut k = keep.iter();
        records.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        ids.retain(|_| *k.next().unwrap());
    }
    let images_sha256 = sha256_file(&images)?;
    for spec in &specs {
        let mut set = attack_records(&model.net, &records, &ids, spec, batch_size, workers)?;
        set.meta.weights_sha256 = model.weights_sha256.clone();
        set.meta.extra = json!({
            "stage": "attack",
            "settings": s.resolved(),
            "model": model.info,
            "images": images.display().to_string(),
            "images_sha256": images_sha256,
        });
        let path = out.join(format!("adv-{}.bin", spec.method));
        write_adversarial_set(&path, &set)?;
        for &eps in &spec.epsilons {
            let idx: Vec<usize> = (0..set.len()).filter(|&i| set.meta.epsilons[i] == eps).collect();
            if idx.is_empty() {
                continue;
            }
            let clean = idx
                .iter()
                .filter(|&&i| set.meta.original_classes[i] == set.records[i].label as usize)
                .count();
            let robust = idx.iter().filter(|&&i| !set.meta.success[i]).count();
            println!(
                "{}\teps={eps}\timages={}\tclean_accuracy={:.4}\tadversarial_accuracy={:.4}",
                spec.method,
                idx.len(),
                clean as f64 / idx.len() as f64,
                robust as f64 / idx.len() as f64
            );
        }
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn from_manifest(path: &std::path::Path, out: &std::path::Path, workers: usize, s: &Settings) -> Result<()> {
    let manifest = ExperimentManifest::load(path)?;
    let base = path.parent().unwrap_or(std::path::Path::new("."));
    let exp = assemble_experiment(&manifest, base, workers)?;
    let benign = out.join(format!("{}-benign.bin", file_stem(path)));
    write_cifar10_file(&benign, &exp.benign)?;
    write_sidecar(
        &benign,
        &json!({
            "stage": "attack",
            "settings": s.resolved(),
            "manifest": path.display().to_string(),
            "experiment_sha256": exp.sha256,
            "source_ids": exp.benign_sources,
        }),
    )?;
    let mut adversarial = exp.adversarial.clone();
    adversarial.meta.extra = json!({
        "stage": "attack",
        "manifest": path.display().to_string(),
        "experiment_sha256": exp.sha256,
    });
    let adv = out.join(format!("{}-adversarial.bin", file_stem(path)));
    write_adversarial_set(&adv, &adversarial)?;
    println!("{}\n{}", benign.display(), adv.display());
    Ok(())
}
