use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use segloo_core::attribution::{select_taps, TapMode};
use segloo_core::bench::{bench_cell, encode_scatter_csv, write_bench_csv, BenchOptions};
use segloo_core::data_io::{atomic_write, sha256_file, ImageBatch};
use segloo_core::segmentation::SegmentationMethod;
use segloo_core::Result;

use super::evaluate::Evaluation;
use super::{load_model, load_records, output_dir, write_sidecar};
use crate::settings::Settings;
use crate::GlobalArgs;

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    arch: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// CIFAR-10 file; the first `--limit` images after `--offset` are timed.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long = "segmentation")]
    segmentations: Vec<String>,
    #[arg(long = "mode")]
    modes: Vec<String>,
    #[arg(long)]
    offset: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    chunk: Option<usize>,
    /// Evaluations whose AUC is attached to the matching cell, repeatable.
    #[arg(long = "eval")]
    evals: Vec<String>,
}

pub fn run(global: &GlobalArgs, args: BenchArgs) -> Result<()> {
    let mut s = Settings::load(global.config.as_deref(), "bench")?;
    let out = output_dir(&s.pick("out", global.out.clone(), PathBuf::from("out"))?)?;
    let arch: PathBuf = s.pick("arch", args.arch, "configs/desk_cifar10.json".into())?;
    let weights: PathBuf = s.require("weights", args.weights)?;
    let images: PathBuf = s.require("images", args.images)?;
    let segmentations = s.pick_list("segmentation", args.segmentations, &["per-pixel", "slic:n_segments=32"])?;
    let modes = s.pick_list("mode", args.modes, &["1d"])?;
    let offset: usize = s.pick("offset", args.offset, 0)?;
    let limit: usize = s.pick("limit", args.limit, 128)?;
    let d = BenchOptions::default();
    let opts = BenchOptions {
        warmup: s.pick("warmup", args.warmup, d.warmup)?,
        repetitions: s.pick("repetitions", args.repetitions, d.repetitions)?,
        workers: s.pick("workers", global.workers, d.workers)?,
        chunk: s.pick("chunk", args.chunk, d.chunk)?,
    };
    let evals = s.pick_list("eval", args.evals, &[])?;

    let segmentations = segmentations
        .iter()
        .map(|m| SegmentationMethod::parse(m))
        .collect::<Result<Vec<_>>>()?;
    let modes = modes.iter().map(|m| TapMode::parse(m)).collect::<Result<Vec<_>>>()?;
    let evals = evals
        .iter()
        .map(|e| Evaluation::load(std::path::Path::new(e)))
        .collect::<Result<Vec<_>>>()?;

    let model = load_model(&arch, &weights)?;
    let (records, ids) = load_records(&images, offset, Some(limit))?;
    let batch = ImageBatch::from_records(&records, ids)?;
    let mut table = Vec::new();
    for seg in &segmentations {
        for mode in &modes {
            let taps = select_taps(&model.net, mode)?;
            let (mut record, _) = bench_cell(&model.net, &batch.images, &batch.source_ids, seg, &taps, &opts)?;
            record.auc = evals
                .iter()
                .find(|e| e.row.segmentation == record.segmentation && e.row.mode == record.mode)
                .map(|e| e.row.auc);
            println!(
                "{}\t{}\tseconds_per_batch={:.3}\tforward_passes={}\tbytes={}",
                record.segmentation, record.mode, record.seconds_per_batch, record.forward_passes, record.attribution_bytes
            );
            table.push(record);
        }
    }
    let path = out.join("bench.csv");
    write_bench_csv(&path, &table)?;
    let scatter = out.join("bench-scatter.csv");
    atomic_write(&scatter, &encode_scatter_csv(&table)?)?;
    write_sidecar(
        &path,
        &json!({
            "stage": "bench",
            "settings": s.resolved(),
            "model": model.info,
            "images": images.display().to_string(),
            "images_sha256": sha256_file(&images)?,
        }),
    )?;
    eprintln!("wrote {} and {}", path.display(), scatter.display());
    Ok(())
}
