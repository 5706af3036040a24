//! Graph-based segmentation over the 8-connected pixel grid.

use serde::{Deserialize, Serialize};

use super::{components4, gaussian_smooth, image_dims, neighbours4, relabel_contiguous, LabelMap};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FelzParams {
    /// Larger values favour fewer, larger segments.
    pub scale: f32,
    pub sigma: f32,
    pub min_size: usize,
}

impl Default for FelzParams {
    fn default() -> Self {
        FelzParams {
            scale: 1.0,
            sigma: 0.8,
            min_size: 20,
        }
    }
}

impl FelzParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("felzenszwalb scale must be > 0, got {}", self.scale)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("felzenszwalb sigma must be >= 0, got {}", self.sigma)));
        }
        if self.min_size == 0 {
            return Err(Error::Config("felzenszwalb min_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Edge {
    pub a: u32,
    pub b: u32,
    pub weight: f32,
}

/// Right, down, down-right and up-right edges, in that order, weighted by
/// the Euclidean colour distance in 0..255 intensity units.
pub(crate) fn grid_edges(pixels: &[f32], height: usize, width: usize) -> Vec<Edge> {
    let dist = |p: usize, q: usize| -> f32 {
        let mut s = 0.0f32;
        for c in 0..3 {
            let d = pixels[p * 3 + c] - pixels[q * 3 + c];
            s += d * d;
        }
        255.0 * s.sqrt()
    };
    let mut edges = Vec::with_capacity(4 * height * width);
    let mut push = |p: usize, q: usize| {
        edges.push(Edge {
            a: p as u32,
            b: q as u32,
            weight: dist(p, q),
        })
    };
    for y in 0..height {
        for x in 0..width - 1 {
            push(y * width + x, y * width + x + 1);
        }
    }
    for y in 0..height - 1 {
        for x in 0..width {
            push(y * width + x, (y + 1) * width + x);
        }
    }
    for y in 0..height - 1 {
        for x in 0..width - 1 {
            push(y * width + x, (y + 1) * width + x + 1);
        }
    }
    for y in 1..height {
        for x in 0..width - 1 {
            push(y * width + x, (y - 1) * width + x + 1);
        }
    }
    edges
}

struct Forest {
    parent: Vec<u32>,
    size: Vec<usize>,
    internal: Vec<f32>,
}

impl Forest {
    fn new(n: usize) -> Self {
        Forest {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut i: u32) -> u32 {
        while self.parent[i as usize] != i {
            let grand = self.parent[self.parent[i as usize] as usize];
            self.parent[i as usize] = grand;
            i = grand;
        }
        i
    }

    fn union(&mut self, a: u32, b: u32, weight: f32) {
        let (root, child) = if a < b { (a, b) } else { (b, a) };
        self.parent[child as usize] = root;
        self.size[root as usize] += self.size[child as usize];
        self.internal[root as usize] = weight;
    }
}

/// The merge stage: edges in ascending weight order (ties by edge index)
/// join two components when the weight does not exceed either component's
/// internal difference plus `scale / size`; then components still smaller
/// than `min_size` are joined along the same edge order. Returns the root
/// of each pixel.
pub(crate) fn merge_graph(pixels: &[f32], height: usize, width: usize, scale: f32, min_size: usize) -> Vec<u32> {
    let mut edges = grid_edges(pixels, height, width);
    edges.sort_by(|e, f| e.weight.total_cmp(&f.weight));
    let mut forest = Forest::new(height * width);
    for e in &edges {
        let (ra, rb) = (forest.find(e.a), forest.find(e.b));
        if ra == rb {
            continue;
        }
        let ta = forest.internal[ra as usize] + scale / forest.size[ra as usize] as f32;
        let tb = forest.internal[rb as usize] + scale / forest.size[rb as usize] as f32;
        if e.weight <= ta.min(tb) {
            forest.union(ra, rb, e.weight);
        }
    }
    for e in &edges {
        let (ra, rb) = (forest.find(e.a), forest.find(e.b));
        if ra != rb && (forest.size[ra as usize] < min_size || forest.size[rb as usize] < min_size) {
            let keep = forest.internal[ra as usize].max(forest.internal[rb as usize]);
            forest.union(ra, rb, keep);
        }
    }
    (0..(height * width) as u32).map(|i| forest.find(i)).collect()
}

/// Splits segments into 4-connected pieces, then folds every piece smaller
/// than `min_size` into the 4-adjacent piece with the closest mean colour.
pub(crate) fn enforce_pieces(pixels: &[f32], height: usize, width: usize, labels: &[u32], min_size: usize) -> Vec<u32> {
    let (mut comp, n) = components4(height, width, labels);
    let mut size = vec![0usize; n];
    let mut sum = vec![[0.0f64; 3]; n];
    for (p, &c) in comp.iter().enumerate() {
        size[c as usize] += 1;
        for ch in 0..3 {
            sum[c as usize][ch] += pixels[p * 3 + ch] as f64;
        }
    }
    let mut alive = n;
    while alive > 1 {
        let Some(small) = (0..n)
            .filter(|&c| size[c] > 0 && size[c] < min_size)
            .min_by_key(|&c| (size[c], c))
        else {
            break;
        };
        let mean = |c: usize| sum[c].map(|s| s / size[c] as f64);
        let m = mean(small);
        let mut best: Option<(f64, usize)> = None;
        for p in 0..comp.len() {
            if comp[p] as usize != small {
                continue;
            }
            for q in neighbours4(p / width, p % width, height, width) {
                let other = comp[q] as usize;
                if other == small {
                    continue;
                }
                let o = mean(other);
                let d = (0..3).map(|ch| (m[ch] - o[ch]).powi(2)).sum::<f64>();
                if best.map_or(true, |(bd, bc)| d < bd || (d == bd && other < bc)) {
                    best = Some((d, other));
                }
            }
        }
        let (_, target) = best.expect("a piece of a multi-piece image has a neighbour");
        for c in comp.iter_mut() {
            if *c as usize == small {
                *c = target as u32;
            }
        }
        size[target] += size[small];
        size[small] = 0;
        let moved = sum[small];
        for ch in 0..3 {
            sum[target][ch] += moved[ch];
        }
        alive -= 1;
    }
    comp
}

/// Felzenszwalb-Huttenlocher segmentation of an `H×W×3` image in `[0, 1]`.
pub fn felzenszwalb(image: &Tensor, params: &FelzParams) -> Result<LabelMap> {
    params.validate()?;
    let (h, w) = image_dims(image)?;
    let smoothed = gaussian_smooth(image, params.sigma)?;
    let roots = merge_graph(smoothed.data(), h, w, params.scale, params.min_size);
    let pieces = enforce_pieces(smoothed.data(), h, w, &roots, params.min_size);
    relabel_contiguous(h, w, &pieces)
}
