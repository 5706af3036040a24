//! Simple linear iterative clustering in (L, a, b, y, x).

use serde::{Deserialize, Serialize};

use super::{components4, image_dims, neighbours4, relabel_contiguous, rgb_to_lab, LabelMap};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicParams {
    /// Upper bound on the number of superpixels.
    pub n_segments: usize,
    pub compactness: f32,
    pub max_iter: usize,
    pub enforce_connectivity: bool,
}

impl Default for SlicParams {
    fn default() -> Self {
        SlicParams {
            n_segments: 100,
            compactness: 10.0,
            max_iter: 10,
            enforce_connectivity: true,
        }
    }
}

impl SlicParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_segments == 0 {
            return Err(Error::Config("slic n_segments must be >= 1".into()));
        }
        if !(self.compactness > 0.0) || !self.compactness.is_finite() {
            return Err(Error::Config(format!(
                "slic compactness must be > 0, got {}",
                self.compactness
            )));
        }
        Ok(())
    }
}

/// Seed layout: `rows × cols` cells of `step_y × step_x` pixels centred in
/// the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub step_y: usize,
    pub step_x: usize,
}

impl Grid {
    /// The square step is the smallest `s` with `s²·k ≥ N`, so the grid
    /// never holds more than `k` cells. Images thinner than one step get a
    /// single row (or column) split into at most `k` cells.
    pub fn new(height: usize, width: usize, k: usize) -> Grid {
        let n = height * width;
        let mut s = ((n as f64 / k as f64).sqrt().ceil() as usize).max(1);
        while s > 1 && (s - 1) * (s - 1) * k >= n {
            s -= 1;
        }
        while s * s * k < n {
            s += 1;
        }
        if height >= s && width >= s {
            Grid {
                rows: height / s,
                cols: width / s,
                step_y: s,
                step_x: s,
            }
        } else if height < s {
            let step_x = width.div_ceil(k);
            Grid {
                rows: 1,
                cols: width / step_x,
                step_y: height,
                step_x,
            }
        } else {
            let step_y = height.div_ceil(k);
            Grid {
                rows: height / step_y,
                cols: 1,
                step_y,
                step_x: width,
            }
        }
    }

    pub fn centres(&self, height: usize, width: usize) -> Vec<(f64, f64)> {
        let off_y = (height - self.rows * self.step_y) as f64 / 2.0;
        let off_x = (width - self.cols * self.step_x) as f64 / 2.0;
        let half_y = (self.step_y as f64 - 1.0) / 2.0;
        let half_x = (self.step_x as f64 - 1.0) / 2.0;
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push((
                    off_y + (r * self.step_y) as f64 + half_y,
                    off_x + (c * self.step_x) as f64 + half_x,
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Centroid {
    lab: [f64; 3],
    y: f64,
    x: f64,
}

/// The clustering stage without connectivity enforcement; labels index the
/// grid cells and may skip cells that lost all their pixels.
pub(crate) fn slic_clusters(lab: &[f32], height: usize, width: usize, params: &SlicParams) -> Vec<u32> {
    let grid = Grid::new(height, width, params.n_segments);
    let pixel = |p: usize| [lab[p * 3] as f64, lab[p * 3 + 1] as f64, lab[p * 3 + 2] as f64];
    let mut centroids: Vec<Centroid> = grid
        .centres(height, width)
        .into_iter()
        .map(|(y, x)| {
            let p = (y as usize).min(height - 1) * width + (x as usize).min(width - 1);
            Centroid { lab: pixel(p), y, x }
        })
        .collect();

    let off_y = (height - grid.rows * grid.step_y) as f64 / 2.0;
    let off_x = (width - grid.cols * grid.step_x) as f64 / 2.0;
    let mut labels: Vec<u32> = (0..height * width)
        .map(|p| {
            let r = ((((p / width) as f64 - off_y) / grid.step_y as f64).floor().max(0.0) as usize).min(grid.rows - 1);
            let c = ((((p % width) as f64 - off_x) / grid.step_x as f64).floor().max(0.0) as usize).min(grid.cols - 1);
            (r * grid.cols + c) as u32
        })
        .collect();

    let step = grid.step_y.max(grid.step_x) as f64;
    let spatial = (params.compactness as f64 / step).powi(2);
    let (wy, wx) = (grid.step_y as f64, grid.step_x as f64);
    let mut best = vec![f64::INFINITY; height * width];
    for _ in 0..params.max_iter {
        best.fill(f64::INFINITY);
        for (k, cen) in centroids.iter().enumerate() {
            let y0 = (cen.y - wy).ceil().max(0.0) as usize;
            let y1 = ((cen.y + wy).floor() as usize).min(height - 1);
            let x0 = (cen.x - wx).ceil().max(0.0) as usize;
            let x1 = ((cen.x + wx).floor() as usize).min(width - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = y * width + x;
                    let v = pixel(p);
                    let dlab = (0..3).map(|c| (v[c] - cen.lab[c]).powi(2)).sum::<f64>();
                    let dxy = (y as f64 - cen.y).powi(2) + (x as f64 - cen.x).powi(2);
                    let d = dlab + dxy * spatial;
                    if d < best[p] {
                        best[p] = d;
                        labels[p] = k as u32;
                    }
                }
            }
        }
        let mut acc = vec![[0.0f64; 6]; centroids.len()];
        for (p, &l) in labels.iter().enumerate() {
            let v = pixel(p);
            let a = &mut acc[l as usize];
            a[0] += v[0];
            a[1] += v[1];
            a[2] += v[2];
            a[3] += (p / width) as f64;
            a[4] += (p % width) as f64;
            a[5] += 1.0;
        }
        for (cen, a) in centroids.iter_mut().zip(&acc) {
            if a[5] > 0.0 {
                *cen = Centroid {
                    lab: [a[0] / a[5], a[1] / a[5], a[2] / a[5]],
                    y: a[3] / a[5],
                    x: a[4] / a[5],
                };
            }
        }
    }
    labels
}

/// Keeps the largest 4-connected piece of every cluster and folds the
/// remaining pieces into their largest 4-adjacent neighbour.
pub(crate) fn merge_orphans(height: usize, width: usize, labels: &[u32]) -> Vec<u32> {
    let (comp, n) = components4(height, width, labels);
    let mut comp_size = vec![0usize; n];
    let mut comp_label = vec![0u32; n];
    for (p, &c) in comp.iter().enumerate() {
        comp_size[c as usize] += 1;
        comp_label[c as usize] = labels[p];
    }
    let clusters = labels.iter().max().map_or(0, |&m| m as usize + 1);
    let mut keeper: Vec<Option<usize>> = vec![None; clusters];
    for c in 0..n {
        let l = comp_label[c] as usize;
        if keeper[l].map_or(true, |k| comp_size[c] > comp_size[k]) {
            keeper[l] = Some(c);
        }
    }
    let mut out: Vec<Option<u32>> = comp.iter().map(|&c| {
        let l = comp_label[c as usize];
        (keeper[l as usize] == Some(c as usize)).then_some(l)
    }).collect();
    let mut size = vec![0usize; clusters];
    for l in out.iter().flatten() {
        size[*l as usize] += 1;
    }
    let mut pieces: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (p, &c) in comp.iter().enumerate() {
        if out[p].is_none() {
            pieces[c as usize].push(p);
        }
    }
    let mut pending: Vec<usize> = (0..n).filter(|&c| !pieces[c].is_empty()).collect();
    while !pending.is_empty() {
        let mut deferred = Vec::new();
        for &c in &pending {
            let mut target: Option<u32> = None;
            for &p in &pieces[c] {
                for q in neighbours4(p / width, p % width, height, width) {
                    if let Some(l) = out[q] {
                        let better = match target {
                            None => true,
                            Some(t) => size[l as usize] > size[t as usize] || (size[l as usize] == size[t as usize] && l < t),
                        };
                        if better {
                            target = Some(l);
                        }
                    }
                }
            }
            match target {
                Some(t) => {
                    for &p in &pieces[c] {
                        out[p] = Some(t);
                    }
                    size[t as usize] += pieces[c].len();
                }
                None => deferred.push(c),
            }
        }
        assert!(deferred.len() < pending.len(), "orphan merging made no progress");
        pending = deferred;
    }
    out.into_iter().map(|l| l.expect("every pixel assigned")).collect()
}

/// SLIC superpixels of an `H×W×3` image in `[0, 1]`; at most
/// `n_segments` segments are returned.
pub fn slic(image: &Tensor, params: &SlicParams) -> Result<LabelMap> {
    params.validate()?;
    let (h, w) = image_dims(image)?;
    if params.n_segments > h * w {
        return Err(Error::InvalidArgument(format!(
            "n_segments {} exceeds the pixel count {}",
            params.n_segments,
            h * w
        )));
    }
    let lab = rgb_to_lab(image)?;
    let mut labels = slic_clusters(lab.data(), h, w, params);
    if params.enforce_connectivity {
        labels = merge_orphans(h, w, &labels);
    }
    relabel_contiguous(h, w, &labels)
}
