use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::color::{gaussian_kernel, reflect_index};
use super::felzenszwalb::merge_graph;
use super::quickshift::{cut_and_flatten, quickshift_forest};
use super::slic::Grid;
use super::*;

fn image(h: usize, w: usize, data: Vec<f32>) -> Tensor {
    Tensor::new(vec![h, w, 3], data).unwrap()
}

fn uniform(h: usize, w: usize, rgb: [f32; 3]) -> Tensor {
    image(h, w, (0..h * w).flat_map(|_| rgb).collect())
}

fn random_image(h: usize, w: usize, seed: u64, levels: Option<u32>) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..h * w * 3)
        .map(|_| match levels {
            Some(l) => rng.gen_range(0..l) as f32 / (l - 1) as f32,
            None => rng.gen_range(0.0..1.0),
        })
        .collect();
    image(h, w, data)
}

fn half_split(h: usize, w: usize) -> Tensor {
    let mut data = Vec::new();
    for _ in 0..h {
        for x in 0..w {
            let v = if x < w / 2 { 0.0 } else { 1.0 };
            data.extend([v; 3]);
        }
    }
    image(h, w, data)
}

fn same_partition(a: &[u32], b: &[u32]) -> bool {
    a.len() == b.len()
        && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

fn assert_valid(map: &LabelMap) {
    let sizes = map.segment_sizes();
    assert!(sizes.iter().all(|&s| s > 0), "unused label");
    assert_eq!(sizes.iter().sum::<usize>(), map.height() * map.width());
    assert!(map.is_four_connected(), "segment not 4-connected");
}

// ---- label maps -----------------------------------------------------------

#[test]
fn label_map_rejects_gaps_and_bad_lengths() {
    assert!(LabelMap::new(1, 3, vec![0, 2, 2]).is_err());
    assert!(LabelMap::new(2, 2, vec![0, 1, 0]).is_err());
    let m = LabelMap::new(1, 3, vec![1, 0, 1]).unwrap();
    assert_eq!(m.segment_count(), 2);
    assert_eq!(m.segment_pixels(), vec![vec![1], vec![0, 2]]);
}

#[test]
fn per_pixel_labels_are_raster_indices() {
    let m = per_pixel(2, 2);
    assert_eq!(m.labels(), &[0, 1, 2, 3]);
    assert_eq!(m.label_at(1, 0), 2);
    assert_eq!(per_pixel(32, 32).segment_count(), 1024);
    let via_method = SegmentationMethod::PerPixel
        .segment(&uniform(32, 32, [0.2; 3]))
        .unwrap();
    assert_eq!(via_method, per_pixel(32, 32));
}

#[test]
fn relabel_examples() {
    let m = relabel_contiguous(1, 4, &[9, 5, 5, 9]).unwrap();
    assert_eq!(m.labels(), &[1, 0, 0, 1]);
    assert_eq!(m.segment_count(), 2);
    let contiguous = [2, 0, 1, 1, 0, 2];
    assert_eq!(relabel_contiguous(2, 3, &contiguous).unwrap().labels(), &contiguous);
}

proptest! {
    #[test]
    fn relabel_preserves_the_partition(raw in prop::collection::vec(0u32..6, 1..40)) {
        let m = relabel_contiguous(1, raw.len(), &raw).unwrap();
        prop_assert!(same_partition(&raw, m.labels()));
        let distinct: std::collections::BTreeSet<_> = raw.iter().collect();
        prop_assert_eq!(m.segment_count(), distinct.len());
    }
}

// ---- colour and smoothing ---------------------------------------------------

#[test]
fn lab_reference_colours() {
    let lab = rgb_to_lab(&image(1, 3, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0])).unwrap();
    let v = lab.data();
    assert!((v[0] - 100.0).abs() < 1e-3 && v[1].abs() < 0.5 && v[2].abs() < 0.5);
    assert!(v[3].abs() < 1e-6 && v[4].abs() < 1e-6 && v[5].abs() < 1e-6);
    // pure sRGB red
    assert!((v[6] - 53.24).abs() < 0.05, "{}", v[6]);
    assert!((v[7] - 80.09).abs() < 0.1, "{}", v[7]);
    assert!((v[8] - 67.20).abs() < 0.1, "{}", v[8]);
}

#[test]
fn reflect_is_half_sample_symmetric() {
    let got: Vec<usize> = (-4..8).map(|i| reflect_index(i, 4)).collect();
    assert_eq!(got, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
    assert_eq!(reflect_index(-3, 1), 0);
}

#[test]
fn zero_sigma_smoothing_is_identity() {
    let img = random_image(5, 7, 1, None);
    assert_eq!(gaussian_smooth(&img, 0.0).unwrap(), img);
}

#[test]
fn kernel_radius_is_three_sigma() {
    assert_eq!(gaussian_kernel(0.8).len(), 2 * 3 + 1);
    assert_eq!(gaussian_kernel(1.0).len(), 7);
    assert_eq!(gaussian_kernel(2.0).len(), 13);
    let total: f32 = gaussian_kernel(1.3).iter().sum();
    assert!((total - 1.0).abs() < 1e-6);
}

/// Direct 2-D convolution with the outer-product kernel.
fn smooth_direct(img: &Tensor, sigma: f32) -> Vec<f64> {
    let [h, w, c] = *img.shape() else { unreachable!() };
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; img.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f64;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let yy = reflect_index(y as isize + dy, h);
                        let xx = reflect_index(x as isize + dx, w);
                        acc += k[(dy + r) as usize] as f64
                            * k[(dx + r) as usize] as f64
                            * img.data()[(yy * w + xx) * c + ch] as f64;
                    }
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    out
}

#[test]
fn separable_smoothing_matches_direct_convolution() {
    for (h, w, sigma, seed) in [(6, 9, 0.8f32, 2u64), (3, 2, 1.7, 3), (11, 5, 0.3, 4)] {
        let img = random_image(h, w, seed, None);
        let fast = gaussian_smooth(&img, sigma).unwrap();
        for (a, b) in fast.data().iter().zip(smooth_direct(&img, sigma)) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }
}

#[test]
fn smoothing_preserves_mass_away_from_borders() {
    // A random patch inside a zero border wider than the kernel radius.
    let (h, w, pad) = (20, 20, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut data = vec![0.0f32; h * w * 3];
    for y in pad..h - pad {
        for x in pad..w - pad {
            for c in 0..3 {
                data[(y * w + x) * 3 + c] = rng.gen_range(0.0..1.0);
            }
        }
    }
    let img = image(h, w, data);
    let out = gaussian_smooth(&img, 1.0).unwrap();
    for c in 0..3 {
        let before: f64 = img.data().iter().skip(c).step_by(3).map(|&v| v as f64).sum();
        let after: f64 = out.data().iter().skip(c).step_by(3).map(|&v| v as f64).sum();
        assert!(((before - after) / (h * w) as f64).abs() < 1e-4);
    }
    let flat = gaussian_smooth(&uniform(7, 7, [0.3, 0.6, 0.9]), 2.0).unwrap();
    for px in flat.data().chunks(3) {
        assert!((px[0] - 0.3).abs() < 1e-6 && (px[1] - 0.6).abs() < 1e-6 && (px[2] - 0.9).abs() < 1e-6);
    }
}

// ---- Felzenszwalb -------------------------------------------------------------

/// Union-find over an explicit edge list with relabel-everything merges.
fn felz_oracle(img: &Tensor, scale: f32, min_size: usize) -> Vec<u32> {
    let [h, w, _] = *img.shape() else { unreachable!() };
    let px = img.data();
    let weight = |p: usize, q: usize| {
        let s: f32 = (0..3).map(|c| (px[p * 3 + c] - px[q * 3 + c]).powi(2)).sum();
        255.0 * s.sqrt()
    };
    let mut pairs = Vec::new();
    for (dy, dx, ys, xs) in [(0i64, 1i64, 0..h, 0..w - 1), (1, 0, 0..h - 1, 0..w), (1, 1, 0..h - 1, 0..w - 1), (-1, 1, 1..h, 0..w - 1)] {
        for y in ys {
            for x in xs.clone() {
                let q = ((y as i64 + dy) as usize) * w + (x as i64 + dx) as usize;
                pairs.push((y * w + x, q));
            }
        }
    }
    let mut edges: Vec<(f32, usize, usize)> = pairs.into_iter().map(|(p, q)| (weight(p, q), p, q)).collect();
    edges.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut comp: Vec<usize> = (0..h * w).collect();
    let mut internal = vec![0.0f32; h * w];
    let size = |comp: &[usize], c: usize| comp.iter().filter(|&&x| x == c).count();
    let join = |comp: &mut Vec<usize>, a: usize, b: usize| {
        let (keep, drop) = (a.min(b), a.max(b));
        for c in comp.iter_mut() {
            if *c == drop {
                *c = keep;
            }
        }
        keep
    };
    for &(wt, p, q) in &edges {
        let (a, b) = (comp[p], comp[q]);
        if a == b {
            continue;
        }
        let ta = internal[a] + scale / size(&comp, a) as f32;
        let tb = internal[b] + scale / size(&comp, b) as f32;
        if wt <= ta.min(tb) {
            let keep = join(&mut comp, a, b);
            internal[keep] = wt;
        }
    }
    for &(_, p, q) in &edges {
        let (a, b) = (comp[p], comp[q]);
        if a != b && (size(&comp, a) < min_size || size(&comp, b) < min_size) {
            join(&mut comp, a, b);
        }
    }
    comp.into_iter().map(|c| c as u32).collect()
}

#[test]
fn felzenszwalb_merge_matches_union_find_oracle() {
    for seed in 0..40u64 {
        let (h, w) = (2 + (seed % 5) as usize, 2 + (seed % 7) as usize);
        let levels = if seed % 2 == 0 { Some(3) } else { None };
        let img = random_image(h, w, seed, levels);
        let scale = [1.0f32, 10.0, 100.0, 1000.0][(seed % 4) as usize];
        let min_size = 1 + (seed % 4) as usize;
        assert_eq!(
            merge_graph(img.data(), h, w, scale, min_size),
            felz_oracle(&img, scale, min_size),
            "seed {seed}"
        );
    }
}

#[test]
fn felzenszwalb_uniform_image_is_one_segment() {
    for scale in [1.0, 10.0, 1000.0] {
        let p = FelzParams { scale, ..FelzParams::default() };
        let m = felzenszwalb(&uniform(32, 32, [0.4, 0.2, 0.7]), &p).unwrap();
        assert_eq!(m.segment_count(), 1);
    }
}

#[test]
fn felzenszwalb_half_split_gives_the_two_halves() {
    let img = half_split(32, 32);
    let p = FelzParams { scale: 100.0, sigma: 0.0, min_size: 10 };
    let m = felzenszwalb(&img, &p).unwrap();
    assert_eq!(m.segment_count(), 2);
    for y in 0..32 {
        for x in 0..32 {
            assert_eq!(m.label_at(y, x), (x >= 16) as u32);
        }
    }
    assert_eq!(felz_oracle(&img, 100.0, 10).iter().collect::<std::collections::BTreeSet<_>>().len(), 2);
}

#[test]
fn felzenszwalb_default_sigma_respects_the_split() {
    let img = half_split(32, 32);
    let p = FelzParams { scale: 100.0, ..FelzParams::default() };
    let m = felzenszwalb(&img, &p).unwrap();
    for y in 0..32 {
        assert_ne!(m.label_at(y, 0), m.label_at(y, 31));
        assert_eq!(m.label_at(y, 0), m.label_at(0, 0));
        assert_eq!(m.label_at(y, 31), m.label_at(0, 31));
    }
    assert!(m.segment_sizes().iter().all(|&s| s >= 20));
}

#[test]
fn felzenszwalb_enforces_min_size_and_connectivity() {
    for seed in 0..20 {
        let img = random_image(16, 12, seed, None);
        for min_size in [1, 5, 20, 200] {
            let p = FelzParams { scale: 50.0, sigma: 0.5, min_size };
            let m = felzenszwalb(&img, &p).unwrap();
            assert_valid(&m);
            if m.segment_count() > 1 {
                assert!(m.segment_sizes().iter().all(|&s| s >= min_size));
            }
        }
    }
}

#[test]
fn felzenszwalb_rejects_bad_input() {
    assert!(felzenszwalb(&Tensor::zeros(vec![0, 4, 3]), &FelzParams::default()).is_err());
    assert!(felzenszwalb(&Tensor::zeros(vec![4, 4, 1]), &FelzParams::default()).is_err());
    let p = FelzParams { scale: 0.0, ..FelzParams::default() };
    assert!(felzenszwalb(&uniform(2, 2, [0.0; 3]), &p).is_err());
}

// ---- QuickShift -----------------------------------------------------------------

struct BruteForest {
    density: Vec<f64>,
    parent: Vec<u32>,
}

/// All-pairs density and linking; valid when the window covers the image.
fn quickshift_oracle(features: &[f32], h: usize, w: usize, kernel_size: f32) -> BruteForest {
    let n = h * w;
    let d2 = |p: usize, q: usize| {
        let (dy, dx) = ((p / w) as f64 - (q / w) as f64, (p % w) as f64 - (q % w) as f64);
        let mut s = dy * dy + dx * dx;
        for c in 0..3 {
            s += (features[p * 3 + c] as f64 - features[q * 3 + c] as f64).powi(2);
        }
        s
    };
    let ks = kernel_size as f64;
    let density: Vec<f64> = (0..n)
        .map(|p| (0..n).map(|q| (-0.5 / (ks * ks) * d2(p, q)).exp()).sum())
        .collect();
    let parent = (0..n)
        .map(|p| {
            let higher = (0..n).filter(|&q| density[q] > density[p] || (density[q] == density[p] && q < p));
            higher
                .min_by(|&a, &b| d2(p, a).partial_cmp(&d2(p, b)).unwrap().then(a.cmp(&b)))
                .unwrap_or(p) as u32
        })
        .collect();
    BruteForest { density, parent }
}

#[test]
fn quickshift_single_pixel_is_one_segment() {
    let m = quickshift(&uniform(1, 1, [0.3; 3]), &QuickshiftParams::default()).unwrap();
    assert_eq!(m.segment_count(), 1);
}

#[test]
fn quickshift_three_by_three_peak_links_everything_to_the_centre() {
    // Centre colour sits at the middle of a cube whose corners hold the
    // eight outer pixels, so the centre is the density peak and the nearest
    // higher pixel for every other one.
    let a = 6.0 / 3f32.sqrt();
    let mut features = Vec::new();
    let mut corner = 0;
    for p in 0..9 {
        if p == 4 {
            features.extend([50.0, 0.0, 0.0]);
        } else {
            let s = |bit: usize| if corner >> bit & 1 == 1 { a } else { -a };
            features.extend([50.0 + s(0), s(1), s(2)]);
            corner += 1;
        }
    }
    let forest = quickshift_forest(&features, 3, 3, 5.0);
    let oracle = quickshift_oracle(&features, 3, 3, 5.0);
    assert_eq!(forest.density, oracle.density);
    assert_eq!(forest.parent, oracle.parent);
    assert!(forest.parent.iter().enumerate().all(|(p, &q)| q == 4 || p == 4));
    assert_eq!(forest.parent[4], 4);
    let roots = cut_and_flatten(&forest, 10.0);
    assert!(roots.iter().all(|&r| r == 4));
}

#[test]
fn quickshift_forest_matches_brute_force_on_small_images() {
    for seed in 0..12u64 {
        let (h, w) = (1 + (seed % 4) as usize, 2 + (seed % 5) as usize);
        let img = random_image(h, w, seed, if seed % 3 == 0 { Some(2) } else { None });
        let lab = rgb_to_lab(&img).unwrap();
        let forest = quickshift_forest(lab.data(), h, w, 5.0);
        let oracle = quickshift_oracle(lab.data(), h, w, 5.0);
        assert_eq!(forest.parent, oracle.parent, "seed {seed}");
    }
}

#[test]
fn quickshift_roots_have_no_close_higher_neighbour() {
    let img = random_image(12, 12, 7, None);
    let lab = rgb_to_lab(&img).unwrap();
    let forest = quickshift_forest(lab.data(), 12, 12, 2.0);
    let roots = cut_and_flatten(&forest, 6.0);
    for p in 0..144 {
        if roots[p] == p as u32 {
            assert!(forest.parent[p] == p as u32 || forest.link_dist[p] > 6.0);
        }
    }
}

#[test]
fn quickshift_is_monotone_in_max_dist() {
    for seed in 0..10 {
        let img = random_image(16, 16, 100 + seed, None);
        let mut last = usize::MAX;
        for max_dist in [2.0, 5.0, 10.0, 20.0, 40.0] {
            let p = QuickshiftParams { max_dist, kernel_size: 3.0, ..QuickshiftParams::default() };
            let m = quickshift(&img, &p).unwrap();
            assert_valid(&m);
            assert!(m.segment_count() <= last);
            last = m.segment_count();
        }
    }
}

// ---- SLIC ---------------------------------------------------------------------

#[test]
fn slic_grid_never_exceeds_the_request() {
    assert_eq!(Grid::new(32, 32, 1), Grid { rows: 1, cols: 1, step_y: 32, step_x: 32 });
    assert_eq!(Grid::new(32, 32, 4).rows, 2);
    let count = |k| {
        let g = Grid::new(32, 32, k);
        g.rows * g.cols
    };
    assert_eq!(count(32), 25);
    assert_eq!(count(64), 64);
    assert_eq!(count(128), 100);
    assert_eq!(count(1024), 1024);
    for (h, w) in [(1, 50), (50, 1), (3, 40), (7, 9)] {
        for k in 1..=h * w {
            let g = Grid::new(h, w, k);
            assert!(g.rows * g.cols <= k && g.rows * g.cols >= 1, "{h}x{w} k={k}: {g:?}");
            assert!(g.rows * g.step_y <= h && g.cols * g.step_x <= w);
        }
    }
}

#[test]
fn slic_single_segment_covers_the_image() {
    let p = SlicParams { n_segments: 1, ..SlicParams::default() };
    let m = slic(&random_image(32, 32, 1, None), &p).unwrap();
    assert_eq!(m.segment_count(), 1);
}

#[test]
fn slic_uniform_image_is_a_voronoi_of_the_seeds() {
    let img = uniform(32, 32, [0.5, 0.25, 0.75]);
    let p = SlicParams { n_segments: 4, ..SlicParams::default() };
    let m = slic(&img, &p).unwrap();
    // colour term vanishes: nearest of the four seeds at 7.5 / 23.5
    let seeds = [(7.5, 7.5), (7.5, 23.5), (23.5, 7.5), (23.5, 23.5)];
    let voronoi: Vec<u32> = (0..1024)
        .map(|i| {
            let (y, x) = ((i / 32) as f64, (i % 32) as f64);
            let d = |s: &(f64, f64)| (s.0 - y).powi(2) + (s.1 - x).powi(2);
            (0..4).min_by(|&a, &b| d(&seeds[a]).partial_cmp(&d(&seeds[b])).unwrap()).unwrap() as u32
        })
        .collect();
    assert_eq!(m.labels(), voronoi.as_slice());
    assert_eq!(m.segment_sizes(), vec![256; 4]);
}

#[test]
fn slic_counts_stay_within_request() {
    for seed in 0..10 {
        let img = random_image(32, 32, 200 + seed, None);
        for k in [32, 64, 128] {
            let p = SlicParams { n_segments: k, ..SlicParams::default() };
            let m = slic(&img, &p).unwrap();
            assert_valid(&m);
            assert!(m.segment_count() <= k && m.segment_count() >= 1);
        }
    }
}

#[test]
fn slic_rejects_more_segments_than_pixels() {
    let p = SlicParams { n_segments: 17, ..SlicParams::default() };
    assert!(matches!(slic(&uniform(4, 4, [0.0; 3]), &p), Err(Error::InvalidArgument(_))));
    let p = SlicParams { n_segments: 16, ..SlicParams::default() };
    assert_eq!(slic(&random_image(4, 4, 1, None), &p).unwrap().segment_count(), 16);
}

#[test]
fn slic_without_connectivity_may_fragment_but_is_a_partition() {
    let img = random_image(20, 20, 9, Some(2));
    let p = SlicParams { n_segments: 16, enforce_connectivity: false, ..SlicParams::default() };
    let m = slic(&img, &p).unwrap();
    assert_eq!(m.segment_sizes().iter().sum::<usize>(), 400);
    assert!(m.segment_count() <= 16);
}

// ---- determinism, parsing and files -------------------------------------------------

#[test]
fn algorithms_are_deterministic() {
    let img = random_image(32, 32, 11, None);
    for spec in ["felzenszwalb:scale=10", "quickshift:max_dist=10", "slic:n_segments=64"] {
        let method = SegmentationMethod::parse(spec).unwrap();
        assert_eq!(method.segment(&img).unwrap(), method.segment(&img).unwrap());
    }
}

#[test]
fn method_cells_round_trip() {
    for spec in [
        "per-pixel",
        "felzenszwalb:scale=100,sigma=0.8,min_size=20",
        "quickshift:sigma=2,max_dist=20,kernel_size=5,ratio=1",
        "slic:n_segments=64,compactness=10,max_iter=10,enforce_connectivity=true",
    ] {
        let m = SegmentationMethod::parse(spec).unwrap();
        assert_eq!(m.to_string(), spec);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<SegmentationMethod>(&json).unwrap(), m);
    }
    assert_eq!(
        SegmentationMethod::parse("slic:n_segments=32").unwrap(),
        SegmentationMethod::Slic(SlicParams { n_segments: 32, ..SlicParams::default() })
    );
    assert!(SegmentationMethod::parse("watershed").is_err());
    assert!(SegmentationMethod::parse("slic:n_segments=0").is_err());
    assert!(SegmentationMethod::parse("felz:k=3").is_err());
}

#[test]
fn chw_entry_point_matches_hwc() {
    let img = random_image(8, 10, 12, None);
    let chw = img.hwc_to_chw().unwrap();
    let method = SegmentationMethod::parse("slic:n_segments=8").unwrap();
    assert_eq!(method.segment_chw(&chw).unwrap(), method.segment(&img).unwrap());
    assert_eq!(SegmentationMethod::PerPixel.segment_chw(&chw).unwrap(), per_pixel(8, 10));
}

#[test]
fn label_file_round_trips_and_rejects_damage() {
    let maps = vec![
        per_pixel(2, 3),
        slic(&random_image(9, 7, 3, None), &SlicParams { n_segments: 6, ..SlicParams::default() }).unwrap(),
    ];
    let bytes = encode_label_maps(&maps).unwrap();
    assert_eq!(&bytes[..4], LABELS_MAGIC);
    assert_eq!(bytes.len(), 12 + (8 + 6 * 4) + (8 + 63 * 4));
    assert_eq!(decode_label_maps(&bytes).unwrap(), maps);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("maps.segl");
    write_label_maps(&path, &maps).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(read_label_maps(&path).unwrap(), maps);

    let mut bad = bytes.clone();
    bad[1] = b'X';
    assert!(matches!(decode_label_maps(&bad), Err(Error::BadMagic { .. })));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(decode_label_maps(&bad), Err(Error::UnsupportedVersion { .. })));
    assert!(matches!(decode_label_maps(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
    let mut bad = bytes.clone();
    bad[16] = 7; // segment count of the first map
    assert!(matches!(decode_label_maps(&bad), Err(Error::Format(_))));
    assert_eq!(encode_label_maps(&[]).unwrap().len(), 12);
}

// ---- randomized invariants ---------------------------------------------------------

fn arb_method() -> impl Strategy<Value = SegmentationMethod> {
    prop_oneof![
        Just(SegmentationMethod::PerPixel),
        (0.5f32..500.0, 0.0f32..1.5, 1usize..30).prop_map(|(scale, sigma, min_size)| {
            SegmentationMethod::Felzenszwalb(FelzParams { scale, sigma, min_size })
        }),
        (0.0f32..2.0, 1.0f32..30.0, 1.0f32..6.0).prop_map(|(sigma, max_dist, kernel_size)| {
            SegmentationMethod::Quickshift(QuickshiftParams { sigma, max_dist, kernel_size, ratio: 1.0 })
        }),
        (1usize..40, 1.0f32..40.0, any::<bool>()).prop_map(|(n, compactness, enforce_connectivity)| {
            SegmentationMethod::Slic(SlicParams { n_segments: n, compactness, max_iter: 10, enforce_connectivity })
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_method_returns_a_partition(h in 1usize..12, w in 1usize..12, seed in any::<u64>(), method in arb_method()) {
        let img = random_image(h, w, seed, if seed % 2 == 0 { Some(3) } else { None });
        let result = method.segment(&img);
        if let SegmentationMethod::Slic(p) = &method {
            if p.n_segments > h * w {
                prop_assert!(result.is_err());
                return Ok(());
            }
        }
        let m = result.unwrap();
        prop_assert_eq!(m.segment_sizes().iter().sum::<usize>(), h * w);
        prop_assert!(m.segment_sizes().iter().all(|&s| s > 0));
        match &method {
            SegmentationMethod::Slic(p) => {
                prop_assert!(m.segment_count() <= p.n_segments);
                if p.enforce_connectivity {
                    prop_assert!(m.is_four_connected());
                }
            }
            SegmentationMethod::Felzenszwalb(p) => {
                prop_assert!(m.is_four_connected());
                if m.segment_count() > 1 {
                    prop_assert!(m.segment_sizes().iter().all(|&s| s >= p.min_size));
                }
            }
            _ => prop_assert!(m.is_four_connected()),
        }
    }

    #[test]
    fn quickshift_refines_as_max_dist_shrinks(h in 1usize..10, w in 1usize..10, seed in any::<u64>(), lo in 1.0f32..15.0, extra in 0.0f32..15.0) {
        let img = random_image(h, w, seed, None);
        let small = quickshift(&img, &QuickshiftParams { max_dist: lo, kernel_size: 2.0, ..QuickshiftParams::default() }).unwrap();
        let big = quickshift(&img, &QuickshiftParams { max_dist: lo + extra, kernel_size: 2.0, ..QuickshiftParams::default() }).unwrap();
        prop_assert!(big.segment_count() <= small.segment_count());
        // every fine segment sits inside one coarse segment
        for seg in small.segment_pixels() {
            let first = big.labels()[seg[0] as usize];
            prop_assert!(seg.iter().all(|&p| big.labels()[p as usize] == first));
        }
    }
}
