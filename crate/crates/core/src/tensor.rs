//! Dense row-major `f32` arrays.

use crate::error::{Error, Result};

/// A dense row-major array of `f32` with an explicit shape.
///
/// The product of the extents always equals `data.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} holds {} values but {} were given",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Number of items along the leading (batch) axis.
    pub fn batch_len(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Extents of one item of a batched tensor.
    pub fn item_shape(&self) -> &[usize] {
        if self.shape.is_empty() {
            &[]
        } else {
            &self.shape[1..]
        }
    }

    /// Values of the `i`-th item along the leading axis.
    pub fn item(&self, i: usize) -> &[f32] {
        let stride: usize = self.item_shape().iter().product();
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [f32] {
        let stride: usize = self.item_shape().iter().product();
        &mut self.data[i * stride..(i + 1) * stride]
    }

    /// Copies item `i` out as its own tensor with a leading batch extent of 1.
    pub fn item_tensor(&self, i: usize) -> Tensor {
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor {
            shape,
            data: self.item(i).to_vec(),
        }
    }

    /// Stacks equally shaped items along a new leading axis.
    pub fn stack(items: &[&[f32]], item_shape: &[usize]) -> Result<Tensor> {
        let stride: usize = item_shape.iter().product();
        let mut data = Vec::with_capacity(stride * items.len());
        for (i, item) in items.iter().enumerate() {
            if item.len() != stride {
                return Err(Error::Shape(format!(
                    "item {i} has {} values, expected {stride}",
                    item.len()
                )));
            }
            data.extend_from_slice(item);
        }
        let mut shape = Vec::with_capacity(item_shape.len() + 1);
        shape.push(items.len());
        shape.extend_from_slice(item_shape);
        Ok(Tensor { shape, data })
    }

    /// Largest absolute value, 0 for an empty tensor.
    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Converts a `[3, H, W]` planar image into an interleaved `[H, W, 3]` one.
    pub fn chw_to_hwc(&self) -> Result<Tensor> {
        let [c, h, w] = self.dims3()?;
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            for p in 0..h * w {
                out[p * c + ch] = self.data[ch * h * w + p];
            }
        }
        Tensor::new(vec![h, w, c], out)
    }

    /// Inverse of [`Tensor::chw_to_hwc`].
    pub fn hwc_to_chw(&self) -> Result<Tensor> {
        let [h, w, c] = self.dims3()?;
        let mut out = vec![0.0; c * h * w];
        for p in 0..h * w {
            for ch in 0..c {
                out[ch * h * w + p] = self.data[p * c + ch];
            }
        }
        Tensor::new(vec![c, h, w], out)
    }

    fn dims3(&self) -> Result<[usize; 3]> {
        match self.shape.as_slice() {
            &[a, b, c] => Ok([a, b, c]),
            other => Err(Error::Shape(format!("expected a rank-3 tensor, got {other:?}"))),
        }
    }
}
