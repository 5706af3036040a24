use super::image_dims;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

// sRGB primaries to CIE XYZ, D65 white.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412453, 0.357580, 0.180423],
    [0.212671, 0.715160, 0.072169],
    [0.019334, 0.119193, 0.950227],
];
const WHITE_D65: [f64; 3] = [0.95047, 1.0, 1.08883];

fn srgb_to_linear(c: f64) -> f64 {
    if c > 0.04045 {
        ((c + 0.055) / 1.055).powf(2.4)
    } else {
        c / 12.92
    }
}

fn lab_f(t: f64) -> f64 {
    if t > 0.008856 {
        t.cbrt()
    } else {
        7.787 * t + 16.0 / 116.0
    }
}

/// Converts an `H×W×3` sRGB image in `[0, 1]` to CIELAB (D65).
pub fn rgb_to_lab(image: &Tensor) -> Result<Tensor> {
    image_dims(image)?;
    let mut out = Vec::with_capacity(image.len());
    for px in image.data().chunks_exact(3) {
        let lin = [
            srgb_to_linear(px[0] as f64),
            srgb_to_linear(px[1] as f64),
            srgb_to_linear(px[2] as f64),
        ];
        let mut f = [0.0; 3];
        for (k, row) in RGB_TO_XYZ.iter().enumerate() {
            let v = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
            f[k] = lab_f(v / WHITE_D65[k]);
        }
        out.push((116.0 * f[1] - 16.0) as f32);
        out.push((500.0 * (f[0] - f[1])) as f32);
        out.push((200.0 * (f[1] - f[2])) as f32);
    }
    Tensor::new(image.shape().to_vec(), out)
}

/// Half-sample symmetric reflection: `-1 -> 0`, `n -> n - 1`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

pub(crate) fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma as f64).ceil() as isize;
    let s2 = 2.0 * (sigma as f64) * (sigma as f64);
    let raw: Vec<f64> = (-radius..=radius).map(|x| (-((x * x) as f64) / s2).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / total) as f32).collect()
}

/// Separable Gaussian blur of each channel of an `H×W×C` image with a
/// kernel truncated at `ceil(3σ)` and reflected borders. `σ = 0` returns
/// the input unchanged.
pub fn gaussian_smooth(image: &Tensor, sigma: f32) -> Result<Tensor> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    let [h, w, c] = *image.shape() else {
        return Err(Error::Shape(format!("expected HxWxC, got {:?}", image.shape())));
    };
    if sigma == 0.0 || image.is_empty() {
        return Ok(image.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let src = image.data();
    let mut rows = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f32;
                for (t, &k) in kernel.iter().enumerate() {
                    let xx = reflect(x as isize + t as isize - r, w);
                    acc += k * src[(y * w + xx) * c + ch];
                }
                rows[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f32;
                for (t, &k) in kernel.iter().enumerate() {
                    let yy = reflect(y as isize + t as isize - r, h);
                    acc += k * rows[(yy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    Tensor::new(image.shape().to_vec(), out)
}

#[cfg(test)]
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    reflect(i, n)
}
