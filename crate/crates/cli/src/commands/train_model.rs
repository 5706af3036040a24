use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use segloo_core::data_io::{load_cifar10, sha256_file};
use segloo_core::nn::{accuracy, load_weights, save_weights, train, TrainHyper};
use segloo_core::{ArchConfig, Network, Result};

use super::write_sidecar;
use crate::settings::Settings;
use crate::GlobalArgs;

#[derive(Args, Debug)]
pub struct TrainModelArgs {
    /// Architecture JSON.
    #[arg(long)]
    arch: Option<PathBuf>,
    /// Directory holding the CIFAR-10 binary files.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Start from these weights instead of a fresh initialisation.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    momentum: Option<f32>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f32>,
    #[arg(long)]
    lr_decay: Option<f32>,
    /// Use only the first N training images.
    #[arg(long)]
    train_limit: Option<usize>,
}

pub fn run(global: &GlobalArgs, args: TrainModelArgs) -> Result<()> {
    let mut s = Settings::load(global.config.as_deref(), "train-model")?;
    let arch_path: PathBuf = s.pick("arch", args.arch, "configs/desk_cifar10.json".into())?;
    let data: PathBuf = s.require("data", args.data)?;
    let init: Option<PathBuf> = s.pick_opt("init", args.init)?;
    let out: PathBuf = s.pick("out", global.out.clone(), "models".into())?;
    let d = TrainHyper::default();
    let hyper = TrainHyper {
        lr: s.pick("lr", args.lr, d.lr)?,
        momentum: s.pick("momentum", args.momentum, d.momentum)?,
        epochs: s.pick("epochs", args.epochs, 10)?,
        batch_size: s.pick("batch_size", args.batch_size, d.batch_size)?,
        seed: s.pick("seed", global.seed, 0)?,
        weight_decay: s.pick("weight_decay", args.weight_decay, 5e-4)?,
        lr_decay: s.pick("lr_decay", args.lr_decay, 0.9)?,
    };
    let limit: Option<usize> = s.pick_opt("train_limit", args.train_limit)?;

    let config = ArchConfig::load(&arch_path)?;
    let net = match &init {
        Some(p) => load_weights(p, &config)?,
        None => Network::build(&config, hyper.seed)?,
    };
    let mut cifar = load_cifar10(&data)?;
    if let Some(n) = limit {
        cifar.train.truncate(n);
    }
    eprintln!(
        "training {} ({} parameters) on {} images",
        config.name,
        net.count_parameters(),
        cifar.train.len()
    );
    let mut progress = |epoch: usize, loss: f64| eprintln!("epoch {:>3}  loss {loss:.4}", epoch + 1);
    let (trained, report) = train(&net, &cifar.train, &hyper, Some(&mut progress))?;
    let test_accuracy = accuracy(&trained, &cifar.test)?;
    eprintln!("test accuracy {:.4}", test_accuracy);

    let weights_path = out.join(format!("{}.sfw", config.name));
    save_weights(&trained, &weights_path)?;
    write_sidecar(
        &weights_path,
        &json!({
            "stage": "train-model",
            "settings": s.resolved(),
            "arch_sha256": sha256_file(&arch_path)?,
            "weights_sha256": sha256_file(&weights_path)?,
            "train_images": cifar.train.len(),
            "epoch_losses": report.epoch_losses,
            "steps": report.steps,
            "test_accuracy": test_accuracy,
        }),
    )?;
    println!("{}", weights_path.display());
    Ok(())
}
