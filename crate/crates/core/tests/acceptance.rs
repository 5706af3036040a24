//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Needs the shipped model and fixture; criteria 4, 5, 6 and 8 also need
//! the CIFAR-10 test batch, looked up in `$SEGLOO_CIFAR10_DIR` and then in
//! `data/cifar-10-batches-bin` under the workspace root. Pass criterion
//! numbers (`3`, `C5`) as arguments to run a subset.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segloo_core::attacks::{attack_batch, attack_records, AttackParams, AttackSpec};
use segloo_core::attribution::{
    build_feature_datasets, empirical_quantile, encode_feature_csv, iqr, loo_attributions_multi,
    read_feature_dataset, select_taps, write_feature_dataset, ExtractOptions, FeatureDataset, FeatureProvenance, ForwardCounter,
    LabeledGroup, SampleClass, TapMode, TapSet,
};
use segloo_core::bench::{accounting, bench_cell, BenchOptions};
use segloo_core::data_io::{
    assemble_with, read_cifar10_file, sha256_hex, Cifar10Record, ExperimentManifest, FileRef, ImageBatch,
};
use segloo_core::detector::{auc, evaluate, logistic_loss_and_grad, split_train_test, train_gbt, DetectorModel, GbtHyper};
use segloo_core::nn::load_weights;
use segloo_core::segmentation::{
    felzenszwalb, per_pixel, quickshift, relabel_contiguous, slic, FelzParams, QuickshiftParams, SegmentationMethod,
    SlicParams,
};
use segloo_core::{ArchConfig, LabelMap, LayerSpec, Network, Tensor};

// Tolerances and sizes.
const PER_PIXEL_PASSES: u64 = 1025;
const SLIC32_MAX_PASSES: u64 = 33;
const C1_RUNTIME_SECS: f64 = 60.0;
const C3_MAX_RATIO: f64 = 0.25;
const C3_MIN_IMAGES: usize = 512;
const C3_RUNTIME_SECS: f64 = 30.0 * 60.0;
const C4_MIN_IMAGES: usize = 512;
const C4_MIN_CLEAN_ACCURACY: f64 = 0.60;
const C4_MAX_FGSM_ACCURACY: f64 = 0.30;
const C5_MIN_PER_SIDE: usize = 1000;
const C5_MIN_10D_AUC: f64 = 0.70;
const C5_MULTI_SLACK: f64 = 0.03;
const C5_1D_SLACK: f64 = 0.06;
const C6_MAX_GAP: f64 = 0.05;
const C6_RUNTIME_SECS: f64 = 2.0 * 3600.0;
const C7_QUANTILE_LISTS: usize = 1000;
const C7_AUC_INSTANCES: usize = 200;
const C7_GRAD_REL_TOL: f64 = 1e-3;
const C8_MIN_IMAGES: usize = 500;
const C9_CHECKS: usize = 10_000;

type Check = Result<(bool, String), String>;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk() -> Network {
    let arch = ArchConfig::load(root().join("configs/desk_cifar10.json")).expect("arch");
    load_weights(root().join("models/desk_cifar10.sfw"), &arch).expect("weights")
}

fn fixture() -> Vec<Cifar10Record> {
    read_cifar10_file(root().join("fixtures/cifar10_test_512.bin")).expect("fixture")
}

fn test_set() -> Result<Vec<Cifar10Record>, String> {
    let dir = std::env::var_os("SEGLOO_CIFAR10_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| root().join("data/cifar-10-batches-bin"));
    let path = dir.join("test_batch.bin");
    read_cifar10_file(&path).map_err(|e| format!("CIFAR-10 test batch unavailable ({}): {e}", path.display()))
}

fn batch_of(records: &[Cifar10Record], ids: Vec<u64>) -> ImageBatch {
    ImageBatch::from_records(records, ids).expect("batch")
}

fn chw(batch: &ImageBatch, i: usize) -> Tensor {
    Tensor::new(batch.images.item_shape().to_vec(), batch.images.item(i).to_vec()).unwrap()
}

fn slic_n(n: usize) -> SegmentationMethod {
    SegmentationMethod::Slic(SlicParams {
        n_segments: n,
        ..SlicParams::default()
    })
}

fn multilayer() -> TapMode {
    TapMode::MultiLayer {
        per_layer: 200,
        last_layers: None,
        seed: 0,
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------

fn c1_forward_budget() -> Check {
    let t = Instant::now();
    let net = desk();
    let records = fixture();
    let batch = batch_of(&records, (0..records.len() as u64).collect());
    let taps = [select_taps(&net, &TapMode::PredictedClass).map_err(err)?];
    let counter = ForwardCounter::new();
    let pixel_map = per_pixel(32, 32);
    let per_pixel_images = 16;
    let mut pixel_ok = 0;
    for i in 0..per_pixel_images {
        counter.reset();
        loo_attributions_multi(&net, &chw(&batch, i), i as u64, &pixel_map, &taps, 128, &counter).map_err(err)?;
        pixel_ok += usize::from(counter.get() == PER_PIXEL_PASSES);
    }
    let slic = slic_n(32);
    let mut worst = 0;
    let mut exact = true;
    for i in 0..batch.len() {
        let image = chw(&batch, i);
        let map = slic.segment_chw(&image).map_err(err)?;
        counter.reset();
        loo_attributions_multi(&net, &image, i as u64, &map, &taps, 128, &counter).map_err(err)?;
        worst = worst.max(counter.get());
        exact &= counter.get() == map.segment_count() as u64 + 1;
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = pixel_ok == per_pixel_images && worst <= SLIC32_MAX_PASSES && exact && secs < C1_RUNTIME_SECS;
    Ok((
        pass,
        format!(
            "per-pixel: {pixel_ok}/{per_pixel_images} images at exactly {PER_PIXEL_PASSES} passes; \
             slic-32 on {} images: max {worst} passes (limit {SLIC32_MAX_PASSES}), k+1 exact = {exact}; {secs:.1} s",
            batch.len()
        ),
    ))
}

fn c2_accounting() -> Check {
    let one_tap = accounting(std::iter::repeat_n((32 * 32, 1), 128));
    let multi = accounting(std::iter::repeat_n((32 * 32, 3810), 128));
    let want_multi: u64 = 128 * 1024 * 3810 * 4;
    let pass = one_tap == 524_288 && multi == want_multi;
    Ok((
        pass,
        format!("per-pixel 1 tap: {one_tap} B (want 524288); 3810 taps: {multi} B (want {want_multi})"),
    ))
}

fn c3_efficiency() -> Check {
    let t = Instant::now();
    let net = desk();
    let records = fixture();
    let n = records.len().max(C3_MIN_IMAGES).min(records.len());
    let batch = batch_of(&records[..n], (0..n as u64).collect());
    let taps = select_taps(&net, &TapMode::PredictedClass).map_err(err)?;
    let opts = BenchOptions {
        workers: 1,
        ..BenchOptions::default()
    };
    let (pixel, _) = bench_cell(&net, &batch.images, &batch.source_ids, &SegmentationMethod::PerPixel, &taps, &opts)
        .map_err(err)?;
    let (slic, _) = bench_cell(&net, &batch.images, &batch.source_ids, &slic_n(32), &taps, &opts).map_err(err)?;
    let ratio = slic.median_seconds / pixel.median_seconds;
    let secs = t.elapsed().as_secs_f64();
    let pass = n >= C3_MIN_IMAGES && ratio <= C3_MAX_RATIO && secs < C3_RUNTIME_SECS;
    Ok((
        pass,
        format!(
            "{n} images, 1 worker, 1d, median of {} after {} warm-up: per-pixel {:.2} s, slic-32 {:.2} s, \
             ratio {ratio:.4} (limit {C3_MAX_RATIO}); {secs:.0} s total",
            opts.repetitions, opts.warmup, pixel.median_seconds, slic.median_seconds
        ),
    ))
}

fn c4_attacks(test: &[Cifar10Record]) -> Check {
    let net = desk();
    let all = batch_of(test, (0..test.len() as u64).collect());
    let predicted = net.predict(&all.images).map_err(err)?;
    let correct: Vec<usize> = (0..test.len()).filter(|&i| predicted[i] == all.labels[i]).collect();
    let clean = correct.len() as f64 / test.len() as f64;
    if clean < C4_MIN_CLEAN_ACCURACY {
        return Ok((false, format!("clean test accuracy {clean:.4} below {C4_MIN_CLEAN_ACCURACY}")));
    }
    let chosen: Vec<Cifar10Record> = correct[..C4_MIN_IMAGES].iter().map(|&i| test[i].clone()).collect();
    let batch = batch_of(&chosen, correct[..C4_MIN_IMAGES].iter().map(|&i| i as u64).collect());
    let acc = |p: AttackParams| -> Result<f64, String> {
        let (_, summary) = attack_batch(&net, &batch.images, &batch.labels, &p, 1).map_err(err)?;
        Ok(summary.adversarial_accuracy)
    };
    let fgsm10 = acc(AttackParams::fgsm(0.1))?;
    let fgsm02 = acc(AttackParams::fgsm(0.02))?;
    let pgd10 = acc(AttackParams::pgd(0.1, 0))?;
    let pass = fgsm10 <= C4_MAX_FGSM_ACCURACY && pgd10 <= fgsm10 && fgsm02 >= fgsm10;
    Ok((
        pass,
        format!(
            "clean accuracy {clean:.4}; on {C4_MIN_IMAGES} correctly classified: FGSM 0.1 {fgsm10:.4} \
             (limit {C4_MAX_FGSM_ACCURACY}), PGD 0.1 {pgd10:.4}, FGSM 0.02 {fgsm02:.4}"
        ),
    ))
}

// ---------------------------------------------------------------------------
// Detection experiments (criteria 5 and 6).

struct Cell {
    segmentation: &'static str,
    mode: &'static str,
    auc: f64,
    test_rows: usize,
}

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

/// Feature datasets for one segmentation, reused across runs when the
/// experiment, weights and extraction settings are unchanged.
fn cached_datasets(
    key: &str,
    modes: &[&str],
    build: impl FnOnce() -> Result<Vec<FeatureDataset>, String>,
) -> Result<Vec<FeatureDataset>, String> {
    let dir = cache_dir().join(key);
    let paths: Vec<PathBuf> = modes.iter().map(|m| dir.join(format!("{m}.csv"))).collect();
    if paths.iter().all(|p| p.exists()) {
        if let Ok(ds) = paths.iter().map(read_feature_dataset).collect::<Result<Vec<_>, _>>() {
            return Ok(ds);
        }
    }
    let ds = build()?;
    for (p, d) in paths.iter().zip(&ds) {
        write_feature_dataset(p, d).map_err(err)?;
    }
    Ok(ds)
}

fn detection_cells(test: &[Cifar10Record]) -> Result<(Vec<Cell>, f64, usize), String> {
    let t = Instant::now();
    let net = desk();
    let batch_size = 112;
    let manifest = ExperimentManifest {
        attack: "fgsm:eps=0.02,0.06,0.1".into(),
        segmentations: vec!["per-pixel".into(), "slic:n_segments=64".into()],
        modes: vec!["1d".into(), "10d".into(), multilayer().to_string()],
        batches: C5_MIN_PER_SIDE.div_ceil(batch_size).div_ceil(3) * 3,
        batch_size,
        sample_seed: 0,
        split_seed: 0,
        train_fraction: 0.8,
        paired: false,
        successful_only: false,
        images: FileRef {
            path: "test_batch.bin".into(),
            sha256: String::new(),
        },
        arch: FileRef {
            path: "configs/desk_cifar10.json".into(),
            sha256: String::new(),
        },
        weights: FileRef {
            path: "models/desk_cifar10.sfw".into(),
            sha256: String::new(),
        },
    };
    let exp = assemble_with(&manifest, test, &net, 1).map_err(err)?;
    let benign = exp.benign_batch().map_err(err)?;
    let adversarial = exp.adversarial_batch().map_err(err)?;
    let per_side = benign.len().min(adversarial.len());
    let modes = [TapMode::PredictedClass, TapMode::OutputLayer, multilayer()];
    let tapsets: Vec<TapSet> = modes.iter().map(|m| select_taps(&net, m)).collect::<Result<_, _>>().map_err(err)?;
    let weights = sha256_hex(&segloo_core::nn::encode_weights(&net));
    let groups = [
        LabeledGroup {
            images: &benign.images,
            ids: &benign.source_ids,
            class: SampleClass::Benign,
            source: "test",
            attack: "none",
            epsilons: &[],
        },
        LabeledGroup {
            images: &adversarial.images,
            ids: &adversarial.source_ids,
            class: SampleClass::Adversarial,
            source: "test",
            attack: &exp.adversarial.meta.attack,
            epsilons: &exp.adversarial.meta.epsilons,
        },
    ];
    let opts = ExtractOptions::default();
    let mut cells = Vec::new();
    for (seg_name, seg) in [("per-pixel", SegmentationMethod::PerPixel), ("slic-64", slic_n(64))] {
        let key = sha256_hex(format!("{}|{weights}|{seg}|{tapsets:?}|{}", exp.sha256, opts.chunk).as_bytes());
        let datasets = cached_datasets(&key, &["1d", "10d", "multilayer"], || {
            let counter = ForwardCounter::new();
            build_feature_datasets(&net, &groups, &seg, &tapsets, &opts, &counter, &weights).map_err(err)
        })?;
        for (mode, ds) in ["1d", "10d", "multilayer"].into_iter().zip(&datasets) {
            let (train, held_out) = split_train_test(ds, manifest.train_fraction, manifest.split_seed).map_err(err)?;
            let model = DetectorModel::Gbt(train_gbt(&train, &GbtHyper::default()).map_err(err)?);
            let report = evaluate(&model, &held_out).map_err(err)?;
            cells.push(Cell {
                segmentation: seg_name,
                mode,
                auc: report.auc,
                test_rows: held_out.len(),
            });
        }
    }
    Ok((cells, t.elapsed().as_secs_f64(), per_side))
}

fn cell_auc(cells: &[Cell], seg: &str, mode: &str) -> f64 {
    cells.iter().find(|c| c.segmentation == seg && c.mode == mode).map(|c| c.auc).unwrap()
}

fn c5_detection(cells: &[Cell], per_side: usize) -> Check {
    let mut parts = Vec::new();
    let mut pass = per_side >= C5_MIN_PER_SIDE;
    for seg in ["per-pixel", "slic-64"] {
        let (a1, a10, am) = (cell_auc(cells, seg, "1d"), cell_auc(cells, seg, "10d"), cell_auc(cells, seg, "multilayer"));
        let ok = a10 >= C5_MIN_10D_AUC && am >= a10 - C5_MULTI_SLACK && a10 - C5_MULTI_SLACK >= a1 - C5_1D_SLACK;
        pass &= ok;
        parts.push(format!("{seg}: 1d {a1:.4}, 10d {a10:.4}, multilayer {am:.4} [{}]", if ok { "ok" } else { "violated" }));
    }
    Ok((
        pass,
        format!(
            "{per_side}+{per_side} images, GBT on {} held-out rows; {}",
            cells[0].test_rows,
            parts.join("; ")
        ),
    ))
}

fn c6_gap(cells: &[Cell], secs: f64) -> Check {
    let gap = (cell_auc(cells, "slic-64", "10d") - cell_auc(cells, "per-pixel", "10d")).abs();
    Ok((
        gap <= C6_MAX_GAP && secs < C6_RUNTIME_SECS,
        format!("10d AUC gap |slic-64 - per-pixel| = {gap:.4} (limit {C6_MAX_GAP}); experiment took {secs:.0} s"),
    ))
}

// ---------------------------------------------------------------------------
// Oracles (criterion 7).

fn quantile_oracle(values: &[f32], p: f64) -> f32 {
    let n = values.len() as f64;
    let mut best = f32::INFINITY;
    for &v in values {
        let at_most = values.iter().filter(|&&u| u <= v).count() as f64;
        if at_most / n >= p && v < best {
            best = v;
        }
    }
    best
}

fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice_wins, mut pairs) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            twice_wins += if scores[i] > scores[j] {
                2
            } else if scores[i] == scores[j] {
                1
            } else {
                0
            };
        }
    }
    twice_wins as f64 / (2 * pairs) as f64
}

/// f64 forward pass over the desk layer kinds, written with plain loops.
/// Also returns every ReLU sign and pooling choice so finite differences can
/// skip coordinates whose step crosses a kink.
fn reference_logits(cfg: &ArchConfig, params: &[Vec<Vec<f64>>], image: &[f64]) -> (Vec<f64>, Vec<u32>) {
    let mut shape = cfg.input_shape.clone();
    let mut x = image.to_vec();
    if let Some(norm) = &cfg.normalization {
        let plane = shape[1] * shape[2];
        for (i, v) in x.iter_mut().enumerate() {
            *v = (*v - norm.mean[i / plane] as f64) / norm.std[i / plane] as f64;
        }
    }
    let mut pattern = Vec::new();
    for (layer, p) in cfg.layers.iter().zip(params) {
        match *layer {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let oh = (h + 2 * padding - kernel) / stride + 1;
                let ow = (w + 2 * padding - kernel) / stride + 1;
                let mut out = vec![0.0; out_channels * oh * ow];
                for o in 0..out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = p[1][o];
                            for ci in 0..c {
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let iy = (oy * stride + ky) as isize - padding as isize;
                                        let ix = (ox * stride + kx) as isize - padding as isize;
                                        if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= w {
                                            continue;
                                        }
                                        acc += p[0][((o * c + ci) * kernel + ky) * kernel + kx]
                                            * x[(ci * h + iy as usize) * w + ix as usize];
                                    }
                                }
                            }
                            out[(o * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
                x = out;
                shape = vec![out_channels, oh, ow];
            }
            LayerSpec::Relu => {
                for v in &mut x {
                    pattern.push(u32::from(*v > 0.0));
                    *v = v.max(0.0);
                }
            }
            LayerSpec::MaxPool2x2 => {
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let mut out = Vec::with_capacity(c * (h / 2) * (w / 2));
                for ci in 0..c {
                    for oy in 0..h / 2 {
                        for ox in 0..w / 2 {
                            let mut best = (ci * h + 2 * oy) * w + 2 * ox;
                            for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                let k = (ci * h + 2 * oy + dy) * w + 2 * ox + dx;
                                if x[k] > x[best] {
                                    best = k;
                                }
                            }
                            pattern.push(best as u32);
                            out.push(x[best]);
                        }
                    }
                }
                x = out;
                shape = vec![c, h / 2, w / 2];
            }
            LayerSpec::Flatten => shape = vec![x.len()],
            LayerSpec::Dense { inputs, outputs } => {
                x = (0..outputs)
                    .map(|o| p[1][o] + (0..inputs).map(|i| p[0][o * inputs + i] * x[i]).sum::<f64>())
                    .collect();
                shape = vec![outputs];
            }
            LayerSpec::Softmax => {}
            ref other => panic!("reference forward does not cover {other:?}"),
        }
    }
    (x, pattern)
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

struct GradStats {
    checked: usize,
    worst: f64,
}

impl GradStats {
    fn new() -> Self {
        GradStats { checked: 0, worst: 0.0 }
    }

    fn add(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        self.worst = self.worst.max(rel_err(analytic, numeric));
    }
}

/// Central differences of `objective` along randomly chosen coordinates of
/// `point`, skipping steps that change the kink pattern.
fn finite_difference_check(
    point: &[f64],
    coords: usize,
    rng: &mut ChaCha8Rng,
    eval: &dyn Fn(&[f64]) -> (f64, Vec<u32>),
    analytic: &dyn Fn(usize) -> f64,
    stats: &mut GradStats,
) {
    let h = 1e-4;
    let (_, base_pattern) = eval(point);
    let mut done = 0;
    for _ in 0..coords * 50 {
        if done == coords {
            break;
        }
        let i = rng.gen_range(0..point.len());
        let mut up = point.to_vec();
        let mut down = point.to_vec();
        up[i] += h;
        down[i] -= h;
        let ((fu, pu), (fd, pd)) = (eval(&up), eval(&down));
        if pu != base_pattern || pd != base_pattern {
            continue;
        }
        stats.add(analytic(i), (fu - fd) / (2.0 * h));
        done += 1;
    }
}

fn gradient_checks() -> Result<(GradStats, GradStats, GradStats, GradStats), String> {
    let net = desk();
    let cfg = net.config().clone();
    let params: Vec<Vec<Vec<f64>>> = net
        .params()
        .iter()
        .map(|ts| ts.iter().map(|t| t.data().iter().map(|&v| v as f64).collect()).collect())
        .collect();
    let records = fixture();
    let batch = batch_of(&records[..2], vec![0, 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let mut input = GradStats::new();
    let mut logit = GradStats::new();
    let grads = net.input_gradient(&batch.images, &batch.labels).map_err(err)?;
    for i in 0..2 {
        let image: Vec<f64> = batch.images.item(i).iter().map(|&v| v as f64).collect();
        let label = batch.labels[i];
        let g = grads.item(i);
        finite_difference_check(
            &image,
            20,
            &mut rng,
            &|x| {
                let (z, p) = reference_logits(&cfg, &params, x);
                (cross_entropy(&z, label), p)
            },
            &|k| g[k] as f64,
            &mut input,
        );
        let class = (label + 3) % 10;
        let lg = net.logit_gradient(&chw(&batch, i), class).map_err(err)?;
        finite_difference_check(
            &image,
            20,
            &mut rng,
            &|x| {
                let (z, p) = reference_logits(&cfg, &params, x);
                (z[class], p)
            },
            &|k| lg.data()[k] as f64,
            &mut logit,
        );
    }

    // Parameter gradients of the summed loss over both images.
    let mut param = GradStats::new();
    let (_, pg) = net.parameter_gradients(&batch.images, &batch.labels).map_err(err)?;
    let images: Vec<Vec<f64>> = (0..2).map(|i| batch.images.item(i).iter().map(|&v| v as f64).collect()).collect();
    for (l, tensors) in params.iter().enumerate() {
        for (t, values) in tensors.iter().enumerate() {
            let eval = |v: &[f64]| {
                let mut ps = params.clone();
                ps[l][t] = v.to_vec();
                let mut loss = 0.0;
                let mut pattern = Vec::new();
                for (img, &y) in images.iter().zip(&batch.labels) {
                    let (z, p) = reference_logits(&cfg, &ps, img);
                    loss += cross_entropy(&z, y);
                    pattern.extend(p);
                }
                (loss, pattern)
            };
            let g = pg[l][t].data();
            finite_difference_check(values, 3, &mut rng, &eval, &|k| g[k] as f64, &mut param);
        }
    }

    // Logistic detector loss.
    let mut logistic = GradStats::new();
    for _ in 0..5 {
        let (n, d) = (rng.gen_range(5..40), rng.gen_range(1..8));
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..2u8))).collect();
        let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = rng.gen_range(-1.0..1.0);
        let (_, gw, gb) = logistic_loss_and_grad(&w, b, &x, &y, 1e-2);
        let mut point = w.clone();
        point.push(b);
        let f = |p: &[f64]| (logistic_loss_and_grad(&p[..d], p[d], &x, &y, 1e-2).0, Vec::new());
        let analytic = |k: usize| if k < d { gw[k] } else { gb };
        finite_difference_check(&point, d + 1, &mut rng, &f, &analytic, &mut logistic);
    }
    Ok((input, logit, param, logistic))
}

fn round_trips(rng: &mut ChaCha8Rng) -> Result<Vec<&'static str>, String> {
    use segloo_core::attacks::{read_adversarial_set, write_adversarial_set};
    use segloo_core::data_io::{decode_report, encode_cifar10, encode_report, parse_cifar10, ReportRow};
    use segloo_core::detector::TrainedDetector;
    use segloo_core::nn::{decode_weights, encode_weights};
    use segloo_core::segmentation::{decode_label_maps, encode_label_maps};

    let mut failed = Vec::new();
    let dir = tempfile::tempdir().map_err(err)?;
    let net = desk();

    let bytes = encode_weights(&net);
    let back = decode_weights(&bytes, net.config()).map_err(err)?;
    let same = back
        .params()
        .iter()
        .flatten()
        .zip(net.params().iter().flatten())
        .all(|(a, b)| a.data().iter().map(|v| v.to_bits()).eq(b.data().iter().map(|v| v.to_bits())));
    if !same || encode_weights(&back) != bytes {
        failed.push("weights");
    }

    let raw = std::fs::read(root().join("fixtures/cifar10_test_512.bin")).map_err(err)?;
    if encode_cifar10(&parse_cifar10(&raw).map_err(err)?) != raw {
        failed.push("cifar10");
    }

    let maps: Vec<LabelMap> = (0..20)
        .map(|_| {
            let (h, w) = (rng.gen_range(1..20), rng.gen_range(1..20));
            let labels: Vec<u32> = (0..h * w).map(|_| rng.gen_range(0..7)).collect();
            relabel_contiguous(h, w, &labels).unwrap()
        })
        .collect();
    let encoded = encode_label_maps(&maps).map_err(err)?;
    if decode_label_maps(&encoded).map_err(err)? != maps {
        failed.push("label maps");
    }

    let rows: Vec<_> = (0..50)
        .map(|i| segloo_core::attribution::FeatureRow {
            image_id: i,
            source: format!("test:{i}"),
            attack: "fgsm:eps=0.1".into(),
            epsilon: [0.02f32, 0.06, 0.1][i as usize % 3],
            label: if i % 2 == 0 { SampleClass::Benign } else { SampleClass::Adversarial },
            features: (0..7).map(|_| f32::from_bits(rng.gen_range(0..0x7f00_0000u32))).collect(),
        })
        .collect();
    let provenance = FeatureProvenance {
        dimension: 7,
        ..Default::default()
    };
    let ds = FeatureDataset::new(rows, 7, provenance.clone()).map_err(err)?;
    let path = dir.path().join("f.csv");
    write_feature_dataset(&path, &ds).map_err(err)?;
    let back = read_feature_dataset(&path).map_err(err)?;
    let bits = |d: &FeatureDataset| d.rows.iter().flat_map(|r| r.features.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    if back.rows.len() != ds.rows.len() || bits(&back) != bits(&ds) || encode_feature_csv(&back.rows, 7).map_err(err)? != std::fs::read(&path).map_err(err)? {
        failed.push("feature csv");
    }

    let records = fixture();
    let spec = AttackSpec::parse("fgsm:eps=0.1").map_err(err)?;
    let set = attack_records(&net, &records[..8], &(0..8).collect::<Vec<_>>(), &spec, 8, 1).map_err(err)?;
    let path = dir.path().join("adv.bin");
    write_adversarial_set(&path, &set).map_err(err)?;
    if read_adversarial_set(&path).map_err(err)? != set {
        failed.push("adversarial set");
    }

    let report: Vec<ReportRow> = (0..5)
        .map(|i| ReportRow {
            attack: "fgsm".into(),
            segmentation: "slic:n_segments=64".into(),
            mode: "10d".into(),
            detector: "gbt".into(),
            dimension: 10,
            auc: rng.gen(),
            accuracy: rng.gen(),
            train_rows: i,
            test_rows: i + 1,
            features_sha256: "00".repeat(32),
        })
        .collect();
    let bytes = encode_report(&report).map_err(err)?;
    let back = decode_report(&bytes).map_err(err)?;
    if back != report || encode_report(&back).map_err(err)? != bytes {
        failed.push("report");
    }

    let train = FeatureDataset::new(
        ds.rows.iter().map(|r| segloo_core::attribution::FeatureRow {
            features: r.features.iter().map(|v| v.clamp(-1e6, 1e6)).collect(),
            ..r.clone()
        }).collect(),
        7,
        provenance,
    )
    .map_err(err)?;
    let model = TrainedDetector {
        model: DetectorModel::Gbt(train_gbt(&train, &GbtHyper { trees: 5, ..GbtHyper::default() }).map_err(err)?),
        features_sha256: "ab".repeat(32),
        provenance: Default::default(),
        split_seed: 3,
        train_fraction: 0.8,
    };
    let path = dir.path().join("model.json");
    model.save(&path).map_err(err)?;
    if TrainedDetector::load(&path).map_err(err)? != model {
        failed.push("detector model");
    }
    Ok(failed)
}

fn c7_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut quantile_bad = 0;
    for case in 0..C7_QUANTILE_LISTS {
        let n = rng.gen_range(1..200);
        let values: Vec<f32> = if case % 2 == 0 {
            (0..n).map(|_| rng.gen_range(0..12) as f32 * 0.25).collect()
        } else {
            (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
        };
        let p: f64 = rng.gen();
        let mut ok = empirical_quantile(&values, p).map_err(err)? == quantile_oracle(&values, p);
        for q in [0.25, 0.5, 0.75] {
            ok &= empirical_quantile(&values, q).map_err(err)? == quantile_oracle(&values, q);
        }
        ok &= iqr(&values).map_err(err)? == quantile_oracle(&values, 0.75) - quantile_oracle(&values, 0.25);
        quantile_bad += usize::from(!ok);
    }

    let mut auc_bad = 0;
    for case in 0..C7_AUC_INSTANCES {
        let n = rng.gen_range(2..150);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = if case % 2 == 0 {
            (0..n).map(|_| rng.gen_range(0..6) as f64).collect()
        } else {
            (0..n).map(|_| rng.gen()).collect()
        };
        auc_bad += usize::from(auc(&scores, &labels).map_err(err)? != auc_oracle(&scores, &labels));
    }

    let (input, logit, param, logistic) = gradient_checks()?;
    let grads_ok = [&input, &logit, &param, &logistic]
        .iter()
        .all(|s| s.checked > 0 && s.worst <= C7_GRAD_REL_TOL);
    let failed = round_trips(&mut rng)?;
    let pass = quantile_bad == 0 && auc_bad == 0 && grads_ok && failed.is_empty();
    Ok((
        pass,
        format!(
            "quantile/iqr mismatches {quantile_bad}/{C7_QUANTILE_LISTS}; auc mismatches {auc_bad}/{C7_AUC_INSTANCES}; \
             max rel. error vs central differences (limit {C7_GRAD_REL_TOL}): input {:.1e} ({}), logit {:.1e} ({}), \
             parameter {:.1e} ({}), logistic {:.1e} ({}); round-trip failures: {}",
            input.worst,
            input.checked,
            logit.worst,
            logit.checked,
            param.worst,
            param.checked,
            logistic.worst,
            logistic.checked,
            if failed.is_empty() { "none".to_owned() } else { failed.join(", ") }
        ),
    ))
}

fn c8_separation(test: &[Cifar10Record]) -> Check {
    let net = desk();
    let all = batch_of(test, (0..test.len() as u64).collect());
    let predicted = net.predict(&all.images).map_err(err)?;
    let correct: Vec<usize> = (0..test.len()).filter(|&i| predicted[i] == all.labels[i]).collect();
    let pool = (C8_MIN_IMAGES * 2).min(correct.len());
    let originals: Vec<Cifar10Record> = correct[..pool].iter().map(|&i| test[i].clone()).collect();
    let ids: Vec<u64> = correct[..pool].iter().map(|&i| i as u64).collect();
    let spec = AttackSpec::parse("fgsm:eps=0.1").map_err(err)?;
    let set = attack_records(&net, &originals, &ids, &spec, 128, 1).map_err(err)?;
    let keep: Vec<usize> = (0..set.len()).filter(|&i| set.meta.success[i]).take(C8_MIN_IMAGES).collect();
    if keep.len() < C8_MIN_IMAGES {
        return Ok((false, format!("only {} successful FGSM 0.1 images out of {pool}", keep.len())));
    }
    let adv: Vec<Cifar10Record> = keep.iter().map(|&i| set.records[i].clone()).collect();
    let orig: Vec<Cifar10Record> = keep.iter().map(|&i| originals[i].clone()).collect();
    let kept_ids: Vec<u64> = keep.iter().map(|&i| ids[i]).collect();
    let taps = [select_taps(&net, &TapMode::PredictedClass).map_err(err)?];
    let counter = ForwardCounter::new();
    let opts = ExtractOptions::default();
    let mean_iqr = |records: &[Cifar10Record]| -> Result<f64, String> {
        let b = batch_of(records, kept_ids.clone());
        let feats = segloo_core::attribution::extract_features(
            &net,
            &b.images,
            &b.source_ids,
            &SegmentationMethod::PerPixel,
            &taps,
            &opts,
            &counter,
        )
        .map_err(err)?;
        Ok(feats.iter().map(|f| f.iqr[0].values[0] as f64).sum::<f64>() / feats.len() as f64)
    };
    let benign = mean_iqr(&orig)?;
    let adversarial = mean_iqr(&adv)?;
    Ok((
        adversarial > benign,
        format!(
            "per-pixel 1d IQR over {} successful FGSM 0.1 images: adversarial mean {adversarial:.6e}, \
             same images before the attack {benign:.6e}",
            keep.len()
        ),
    ))
}

// ---------------------------------------------------------------------------
// Segmentation invariants (criterion 9).

/// Labels are exactly 0..k with each used.
fn is_partition(map: &LabelMap) -> bool {
    let k = map.segment_count();
    let mut used = vec![false; k];
    for &l in map.labels() {
        if l as usize >= k {
            return false;
        }
        used[l as usize] = true;
    }
    map.labels().len() == map.height() * map.width() && used.iter().all(|&u| u)
}

/// Every segment is one 4-connected component (breadth-first search).
fn is_connected(map: &LabelMap) -> bool {
    let (h, w) = (map.height(), map.width());
    let labels = map.labels();
    let mut seen = vec![false; h * w];
    let mut components = 0;
    for start in 0..h * w {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            let (y, x) = (p / w, p % w);
            let mut next = Vec::with_capacity(4);
            if y > 0 {
                next.push(p - w);
            }
            if y + 1 < h {
                next.push(p + w);
            }
            if x > 0 {
                next.push(p - 1);
            }
            if x + 1 < w {
                next.push(p + 1);
            }
            for q in next {
                if !seen[q] && labels[q] == labels[p] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
    }
    components == map.segment_count()
}

fn sizes(map: &LabelMap) -> Vec<usize> {
    let mut s = vec![0; map.segment_count()];
    for &l in map.labels() {
        s[l as usize] += 1;
    }
    s
}

fn hwc(h: usize, w: usize, data: Vec<f32>) -> Tensor {
    Tensor::new(vec![h, w, 3], data).unwrap()
}

fn random_image(rng: &mut ChaCha8Rng, fixture: &[Cifar10Record]) -> Tensor {
    let (h, w) = (rng.gen_range(1..=20), rng.gen_range(1..=20));
    match rng.gen_range(0..3) {
        0 => hwc(h, w, (0..h * w * 3).map(|_| rng.gen()).collect()),
        1 => {
            let colors: Vec<[f32; 3]> = (0..rng.gen_range(1..5)).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
            let block = rng.gen_range(1..8);
            let pick: Vec<usize> = (0..(h / block + 1) * (w / block + 1)).map(|_| rng.gen_range(0..colors.len())).collect();
            let mut data = Vec::with_capacity(h * w * 3);
            for y in 0..h {
                for x in 0..w {
                    data.extend_from_slice(&colors[pick[(y / block) * (w / block + 1) + x / block]]);
                }
            }
            hwc(h, w, data)
        }
        _ => {
            let r = &fixture[rng.gen_range(0..fixture.len())];
            let (y0, x0) = (rng.gen_range(0..=32 - h), rng.gen_range(0..=32 - w));
            let mut data = Vec::with_capacity(h * w * 3);
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    for c in 0..3 {
                        data.push(r.pixels[c * 1024 + y * 32 + x] as f32 / 255.0);
                    }
                }
            }
            hwc(h, w, data)
        }
    }
}

fn analytic_segmentation_cases() -> Vec<(&'static str, bool)> {
    let uniform = hwc(32, 32, [0.3f32, 0.5, 0.7].repeat(1024));
    let mut cases = Vec::new();
    for scale in [1.0, 100.0, 1000.0] {
        let m = felzenszwalb(&uniform, &FelzParams { scale, ..FelzParams::default() }).unwrap();
        cases.push(("uniform felzenszwalb is one segment", m.segment_count() == 1));
    }
    let m = slic(&uniform, &SlicParams { n_segments: 4, ..SlicParams::default() }).unwrap();
    let blocks = (0..1024).all(|p| {
        let (y, x) = (p / 32, p % 32);
        let same_block = |q: usize| (q / 32 / 16, q % 32 / 16) == (y / 16, x / 16);
        (0..1024).filter(|&q| m.labels()[q] == m.labels()[p]).all(same_block)
    });
    cases.push(("uniform slic n=4 gives 16x16 blocks", m.segment_count() == 4 && blocks));
    let m = slic(&uniform, &SlicParams { n_segments: 1, ..SlicParams::default() }).unwrap();
    cases.push(("slic n=1 is one segment", m.segment_count() == 1));

    let mut half = Vec::with_capacity(1024 * 3);
    for _y in 0..32 {
        for x in 0..32 {
            half.extend_from_slice(&[if x < 16 { 0.0 } else { 1.0 }; 3]);
        }
    }
    let m = felzenszwalb(&hwc(32, 32, half), &FelzParams { scale: 100.0, sigma: 0.0, min_size: 10 }).unwrap();
    let halves = (0..1024).all(|p| (m.labels()[p] == m.labels()[0]) == (p % 32 < 16));
    cases.push(("black/white halves give 2 segments", m.segment_count() == 2 && halves));

    let m = quickshift(&hwc(1, 1, vec![0.2, 0.4, 0.6]), &QuickshiftParams::default()).unwrap();
    cases.push(("1x1 quickshift is one segment", m.segment_count() == 1));
    cases.push(("2x2 per-pixel labels", per_pixel(2, 2).labels() == [0, 1, 2, 3]));
    cases.push(("32x32 per-pixel has 1024 segments", per_pixel(32, 32).segment_count() == 1024));
    cases
}

fn c9_segmentation() -> Check {
    let t = Instant::now();
    let fixture = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut failures: Vec<String> = Vec::new();
    let mut counts = [0usize; 4];
    for case in 0..C9_CHECKS {
        let image = random_image(&mut rng, &fixture);
        let (h, w) = (image.shape()[0], image.shape()[1]);
        let kind = case % 10;
        let (name, ok) = match kind {
            0..=3 => {
                counts[0] += 1;
                let p = SlicParams {
                    n_segments: rng.gen_range(1..=(h * w).min(40)),
                    compactness: [1.0, 10.0, 20.0][rng.gen_range(0..3)],
                    max_iter: 10,
                    enforce_connectivity: rng.gen_range(0..4) != 0,
                };
                let m = slic(&image, &p).map_err(err)?;
                let again = if case % 20 == 0 { slic(&image, &p).map_err(err)? == m } else { true };
                let ok = is_partition(&m)
                    && (!p.enforce_connectivity || is_connected(&m))
                    && (1..=p.n_segments).contains(&m.segment_count())
                    && again;
                ("slic", ok)
            }
            4..=6 => {
                counts[1] += 1;
                let p = FelzParams {
                    scale: [1.0, 10.0, 100.0, 1000.0][rng.gen_range(0..4)],
                    sigma: [0.0, 0.5, 0.8][rng.gen_range(0..3)],
                    min_size: rng.gen_range(1..30),
                };
                let m = felzenszwalb(&image, &p).map_err(err)?;
                let floor = p.min_size.min(h * w);
                let ok = is_partition(&m) && is_connected(&m) && sizes(&m).iter().all(|&s| s >= floor);
                ("felzenszwalb", ok)
            }
            7 | 8 => {
                counts[2] += 1;
                let base = QuickshiftParams {
                    kernel_size: rng.gen_range(1.0..3.0),
                    sigma: [0.0, 0.5][rng.gen_range(0..2)],
                    ..QuickshiftParams::default()
                };
                let near = rng.gen_range(0.5..15.0f32);
                let far = near + rng.gen_range(0.0..15.0f32);
                let a = quickshift(&image, &QuickshiftParams { max_dist: near, ..base }).map_err(err)?;
                let b = quickshift(&image, &QuickshiftParams { max_dist: far, ..base }).map_err(err)?;
                let ok = is_partition(&a)
                    && is_partition(&b)
                    && is_connected(&a)
                    && is_connected(&b)
                    && b.segment_count() <= a.segment_count();
                ("quickshift", ok)
            }
            _ => {
                counts[3] += 1;
                let raw: Vec<u32> = (0..h * w).map(|_| rng.gen_range(0..1000)).collect();
                let m = relabel_contiguous(h, w, &raw).map_err(err)?;
                let mut ok = is_partition(&m) && per_pixel(h, w).segment_count() == h * w;
                for _ in 0..20 {
                    let (p, q) = (rng.gen_range(0..h * w), rng.gen_range(0..h * w));
                    ok &= (raw[p] == raw[q]) == (m.labels()[p] == m.labels()[q]);
                }
                ("relabel", ok)
            }
        };
        if !ok && failures.len() < 5 {
            failures.push(format!("case {case} ({name}, {h}x{w})"));
        } else if !ok {
            failures.push(String::new());
        }
    }
    let analytic = analytic_segmentation_cases();
    let analytic_failed: Vec<&str> = analytic.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let pass = failures.is_empty() && analytic_failed.is_empty();
    Ok((
        pass,
        format!(
            "{} randomized checks (slic {}, felzenszwalb {}, quickshift pairs {}, relabel {}): {} failed{}; \
             analytic cases {}/{} exact{}; {:.1} s",
            C9_CHECKS,
            counts[0],
            counts[1],
            counts[2],
            counts[3],
            failures.len(),
            if failures.is_empty() {
                String::new()
            } else {
                format!(" (first: {})", failures.iter().filter(|f| !f.is_empty()).cloned().collect::<Vec<_>>().join(", "))
            },
            analytic.len() - analytic_failed.len(),
            analytic.len(),
            if analytic_failed.is_empty() {
                String::new()
            } else {
                format!(" (failed: {})", analytic_failed.join(", "))
            },
            t.elapsed().as_secs_f64()
        ),
    ))
}

// ---------------------------------------------------------------------------

fn report(id: u8, name: &str, outcome: Check) -> bool {
    let (pass, detail) = match outcome {
        Ok(r) => r,
        Err(e) => (false, format!("could not run: {e}")),
    };
    println!("{} C{id} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn main() {
    let selected: Vec<u8> = std::env::args()
        .skip(1)
        .filter_map(|a| a.trim_start_matches(['C', 'c']).parse().ok())
        .collect();
    let want = |id: u8| selected.is_empty() || selected.contains(&id);
    let mut all = true;
    if want(1) {
        all &= report(1, "forward-pass budget", c1_forward_budget());
    }
    if want(2) {
        all &= report(2, "memory accounting", c2_accounting());
    }
    if want(7) {
        all &= report(7, "oracle equivalences", c7_oracles());
    }
    if want(9) {
        all &= report(9, "segmentation invariants", c9_segmentation());
    }
    let test = if [4, 5, 6, 8].iter().any(|&i| want(i)) { Some(test_set()) } else { None };
    let test = test.as_ref();
    if want(4) {
        all &= report(4, "attack efficacy ordering", test.unwrap().clone().and_then(|t| c4_attacks(&t)));
    }
    if want(8) {
        all &= report(8, "IQR separation", test.unwrap().clone().and_then(|t| c8_separation(&t)));
    }
    if want(5) || want(6) {
        let cells = test.unwrap().clone().and_then(|t| detection_cells(&t));
        match cells {
            Ok((cells, secs, per_side)) => {
                if want(5) {
                    all &= report(5, "detection quality", c5_detection(&cells, per_side));
                }
                if want(6) {
                    all &= report(6, "segmentation-vs-LOO gap", c6_gap(&cells, secs));
                }
            }
            Err(e) => {
                for (id, name) in [(5, "detection quality"), (6, "segmentation-vs-LOO gap")] {
                    if want(id) {
                        all &= report(id, name, Err(e.clone()));
                    }
                }
            }
        }
    }
    if want(3) {
        all &= report(3, "efficiency ratio", c3_efficiency());
    }
    if !all {
        std::process::exit(1);
    }
}
