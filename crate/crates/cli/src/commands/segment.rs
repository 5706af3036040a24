use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use segloo_core::data_io::{sha256_file, ImageBatch};
use segloo_core::segmentation::{write_label_maps, SegmentationMethod};
use segloo_core::{parallel, Result, Tensor};

use super::{load_records, output_dir, slug, write_sidecar};
use crate::settings::Settings;
use crate::GlobalArgs;

#[derive(Args, Debug)]
pub struct SegmentArgs {
    /// CIFAR-10 binary file.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Segmentation cell, repeatable, e.g. `slic:n_segments=64`.
    #[arg(long = "segmentation")]
    segmentations: Vec<String>,
    #[arg(long)]
    offset: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
}

pub fn run(global: &GlobalArgs, args: SegmentArgs) -> Result<()> {
    let mut s = Settings::load(global.config.as_deref(), "segment")?;
    let out = output_dir(&s.pick("out", global.out.clone(), PathBuf::from("out"))?)?;
    let workers: usize = s.pick("workers", global.workers, 1)?;
    let images: PathBuf = s.require("images", args.images)?;
    let methods = s.pick_list("segmentation", args.segmentations, &["slic:n_segments=64"])?;
    let offset: usize = s.pick("offset", args.offset, 0)?;
    let limit: Option<usize> = s.pick_opt("limit", args.limit)?;
    let methods = methods
        .iter()
        .map(|m| SegmentationMethod::parse(m))
        .collect::<Result<Vec<_>>>()?;

    let (records, ids) = load_records(&images, offset, limit)?;
    let batch = ImageBatch::from_records(&records, ids.clone())?;
    let indices: Vec<usize> = (0..batch.len()).collect();
    let images_sha256 = sha256_file(&images)?;
    for method in &methods {
        let maps = parallel::map(&indices, workers, |_, &i| {
            let image = Tensor::new(batch.images.item_shape().to_vec(), batch.images.item(i).to_vec())?;
            method.segment_chw(&image)
        })?;
        let counts: Vec<usize> = maps.iter().map(|m| m.segment_count()).collect();
        let mean = counts.iter().sum::<usize>() as f64 / counts.len().max(1) as f64;
        let path = out.join(format!("segments-{}.bin", slug(&method.to_string())));
        write_label_maps(&path, &maps)?;
        write_sidecar(
            &path,
            &json!({
                "stage": "segment",
                "settings": s.resolved(),
                "segmentation": method.to_string(),
                "images": images.display().to_string(),
                "images_sha256": images_sha256,
                "source_ids": ids,
                "segment_counts": counts,
                "labels_sha256": sha256_file(&path)?,
            }),
        )?;
        println!("{method}\timages={}\tmean_segments={mean:.2}", maps.len());
    }
    Ok(())
}
