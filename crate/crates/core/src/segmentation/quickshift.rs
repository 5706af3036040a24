//! Mode seeking in the joint (colour, position) space.

use serde::{Deserialize, Serialize};

use super::{components4, gaussian_smooth, image_dims, relabel_contiguous, rgb_to_lab, LabelMap};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuickshiftParams {
    /// Pre-smoothing applied to the Lab image.
    pub sigma: f32,
    /// Links longer than this are cut; larger values give fewer segments.
    pub max_dist: f32,
    /// Bandwidth of the Parzen density estimate.
    pub kernel_size: f32,
    /// Weight of colour against position.
    pub ratio: f32,
}

impl Default for QuickshiftParams {
    fn default() -> Self {
        QuickshiftParams {
            sigma: 0.0,
            max_dist: 10.0,
            kernel_size: 5.0,
            ratio: 1.0,
        }
    }
}

impl QuickshiftParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_dist > 0.0) || !self.max_dist.is_finite() {
            return Err(Error::Config(format!("quickshift max_dist must be > 0, got {}", self.max_dist)));
        }
        if !(self.kernel_size > 0.0) || !self.kernel_size.is_finite() {
            return Err(Error::Config(format!(
                "quickshift kernel_size must be > 0, got {}",
                self.kernel_size
            )));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("quickshift sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.ratio >= 0.0) || !self.ratio.is_finite() {
            return Err(Error::Config(format!("quickshift ratio must be >= 0, got {}", self.ratio)));
        }
        Ok(())
    }
}

pub(crate) struct QuickshiftForest {
    #[cfg_attr(not(test), allow(dead_code))]
    pub density: Vec<f64>,
    /// Nearest higher-density pixel inside the window, or the pixel itself.
    pub parent: Vec<u32>,
    pub link_dist: Vec<f64>,
}

fn dist2(features: &[f32], p: usize, q: usize, dy: isize, dx: isize) -> f64 {
    let mut s = (dy * dy + dx * dx) as f64;
    for c in 0..3 {
        let d = features[p * 3 + c] as f64 - features[q * 3 + c] as f64;
        s += d * d;
    }
    s
}

/// Densities and parent links over a square window of radius
/// `ceil(3·kernel_size)`. Pixel `q` is above `p` when its density is
/// larger, or equal with a lower index; among equally near candidates the
/// lowest index wins.
pub(crate) fn quickshift_forest(features: &[f32], height: usize, width: usize, kernel_size: f32) -> QuickshiftForest {
    let n = height * width;
    let radius = (3.0 * kernel_size as f64).ceil() as isize;
    let inv = -0.5 / (kernel_size as f64 * kernel_size as f64);
    let window = |y: usize, x: usize| {
        let y0 = (y as isize - radius).max(0) as usize;
        let y1 = (y as isize + radius).min(height as isize - 1) as usize;
        let x0 = (x as isize - radius).max(0) as usize;
        let x1 = (x as isize + radius).min(width as isize - 1) as usize;
        (y0..=y1).flat_map(move |yy| (x0..=x1).map(move |xx| (yy, xx)))
    };

    let mut density = vec![0.0f64; n];
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            density[p] = window(y, x)
                .map(|(yy, xx)| {
                    let q = yy * width + xx;
                    let d = dist2(features, p, q, yy as isize - y as isize, xx as isize - x as isize);
                    (d * inv).exp()
                })
                .sum();
        }
    }

    let above = |q: usize, p: usize| density[q] > density[p] || (density[q] == density[p] && q < p);
    let mut parent: Vec<u32> = (0..n as u32).collect();
    let mut link_dist = vec![0.0f64; n];
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let mut closest = f64::INFINITY;
            for (yy, xx) in window(y, x) {
                let q = yy * width + xx;
                if !above(q, p) {
                    continue;
                }
                let d = dist2(features, p, q, yy as isize - y as isize, xx as isize - x as isize);
                if d < closest {
                    closest = d;
                    parent[p] = q as u32;
                }
            }
            if closest.is_finite() {
                link_dist[p] = closest.sqrt();
            }
        }
    }
    QuickshiftForest {
        density,
        parent,
        link_dist,
    }
}

/// Roots of the forest left after cutting links longer than `max_dist`.
pub(crate) fn cut_and_flatten(forest: &QuickshiftForest, max_dist: f32) -> Vec<u32> {
    let mut parent: Vec<u32> = forest
        .parent
        .iter()
        .enumerate()
        .map(|(p, &q)| if forest.link_dist[p] > max_dist as f64 { p as u32 } else { q })
        .collect();
    // Links always point upward in the total order, so this terminates.
    loop {
        let next: Vec<u32> = parent.iter().map(|&q| parent[q as usize]).collect();
        if next == parent {
            return parent;
        }
        parent = next;
    }
}

/// QuickShift segmentation of an `H×W×3` image in `[0, 1]`.
pub fn quickshift(image: &Tensor, params: &QuickshiftParams) -> Result<LabelMap> {
    params.validate()?;
    let (h, w) = image_dims(image)?;
    let lab = gaussian_smooth(&rgb_to_lab(image)?, params.sigma)?;
    let features: Vec<f32> = lab.data().iter().map(|v| v * params.ratio).collect();
    let forest = quickshift_forest(&features, h, w, params.kernel_size);
    let roots = cut_and_flatten(&forest, params.max_dist);
    let (pieces, _) = components4(h, w, &roots);
    relabel_contiguous(h, w, &pieces)
}
