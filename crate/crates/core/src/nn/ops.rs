//! Batched layer kernels. All buffers are row-major; images are `[C, H, W]`.

/// `c = a * b (+ c if accumulate)` for an `m x k` by `k x n` product, with
/// explicit row/column strides for `a` and `b` so transposes are free.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    c: &mut [f32],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the index bounds of every operand were checked above, and the
    // output does not alias the inputs (distinct borrows).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    fn im2col(&self, x: &[f32], cols: &mut [f32]) {
        let p = self.out_pixels();
        let k = self.kernel;
        for c in 0..self.in_c {
            let plane = &x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.in_h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            *v = if ix < 0 || ix >= self.in_w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], dx: &mut [f32]) {
        let p = self.out_pixels();
        let k = self.kernel;
        for c in 0..self.in_c {
            let plane = &mut dx[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let line = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        let dst = &mut plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for (ox, v) in line.iter().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix >= 0 && ix < self.in_w as isize {
                                dst[ix as usize] += *v;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(
    g: &ConvGeom,
    n: usize,
    x: &[f32],
    weight: &[f32],
    bias: &[f32],
    out: &mut [f32],
) {
    let in_len = g.in_c * g.in_h * g.in_w;
    let out_len = g.out_c * g.out_pixels();
    let p = g.out_pixels();
    let mut cols = vec![0.0f32; g.patch_len() * p];
    for i in 0..n {
        g.im2col(&x[i * in_len..(i + 1) * in_len], &mut cols);
        let o = &mut out[i * out_len..(i + 1) * out_len];
        gemm(
            g.out_c,
            g.patch_len(),
            p,
            weight,
            g.patch_len(),
            1,
            &cols,
            p,
            1,
            o,
            false,
        );
        for (oc, b) in bias.iter().enumerate() {
            for v in &mut o[oc * p..(oc + 1) * p] {
                *v += *b;
            }
        }
    }
}

/// Back-propagates through a convolution. Parameter gradients are
/// accumulated when `grads` is given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    g: &ConvGeom,
    n: usize,
    x: &[f32],
    weight: &[f32],
    dout: &[f32],
    dx: &mut [f32],
    mut grads: Option<(&mut [f32], &mut [f32])>,
) {
    let in_len = g.in_c * g.in_h * g.in_w;
    let out_len = g.out_c * g.out_pixels();
    let p = g.out_pixels();
    let kk = g.patch_len();
    let mut cols = vec![0.0f32; kk * p];
    let mut dcols = vec![0.0f32; kk * p];
    for i in 0..n {
        let d = &dout[i * out_len..(i + 1) * out_len];
        if let Some((dw, db)) = grads.as_mut() {
            g.im2col(&x[i * in_len..(i + 1) * in_len], &mut cols);
            // dW[O, kk] += dOut[O, P] * cols^T
            gemm(g.out_c, p, kk, d, p, 1, &cols, 1, p, dw, true);
            for (oc, b) in db.iter_mut().enumerate() {
                *b += d[oc * p..(oc + 1) * p].iter().sum::<f32>();
            }
        }
        // dcols[kk, P] = W^T * dOut
        gemm(kk, g.out_c, p, weight, 1, kk, d, p, 1, &mut dcols, false);
        let dxi = &mut dx[i * in_len..(i + 1) * in_len];
        dxi.fill(0.0);
        g.col2im(&dcols, dxi);
    }
}

pub(crate) fn dense_forward(
    n: usize,
    inputs: usize,
    outputs: usize,
    x: &[f32],
    weight: &[f32],
    bias: &[f32],
    out: &mut [f32],
) {
    // out[N, O] = x[N, I] * W^T
    gemm(n, inputs, outputs, x, inputs, 1, weight, 1, inputs, out, false);
    for row in out.chunks_exact_mut(outputs) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    n: usize,
    inputs: usize,
    outputs: usize,
    x: &[f32],
    weight: &[f32],
    dout: &[f32],
    dx: &mut [f32],
    grads: Option<(&mut [f32], &mut [f32])>,
) {
    // dx[N, I] = dOut[N, O] * W[O, I]
    gemm(n, outputs, inputs, dout, outputs, 1, weight, inputs, 1, dx, false);
    if let Some((dw, db)) = grads {
        // dW[O, I] += dOut^T * x
        gemm(outputs, n, inputs, dout, 1, outputs, x, inputs, 1, dw, true);
        for row in dout.chunks_exact(outputs) {
            for (b, d) in db.iter_mut().zip(row) {
                *b += *d;
            }
        }
    }
}

/// 2x2 max pooling with stride 2; records the winning input offset
/// (within the item) of every output for the backward pass.
pub(crate) fn maxpool_forward(
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    x: &[f32],
    out: &mut [f32],
    argmax: &mut [u32],
) {
    let (oh, ow) = (h / 2, w / 2);
    let in_len = c * h * w;
    let out_len = c * oh * ow;
    for i in 0..n {
        let xi = &x[i * in_len..(i + 1) * in_len];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = ch * h * w + 2 * oy * w + 2 * ox;
                    let mut best = base;
                    for off in [base + 1, base + w, base + w + 1] {
                        if xi[off] > xi[best] {
                            best = off;
                        }
                    }
                    let o = i * out_len + (ch * oh + oy) * ow + ox;
                    out[o] = xi[best];
                    argmax[o] = best as u32;
                }
            }
        }
    }
}

pub(crate) fn maxpool_backward(
    n: usize,
    in_len: usize,
    out_len: usize,
    argmax: &[u32],
    dout: &[f32],
    dx: &mut [f32],
) {
    dx.fill(0.0);
    for i in 0..n {
        for o in 0..out_len {
            dx[i * in_len + argmax[i * out_len + o] as usize] += dout[i * out_len + o];
        }
    }
}

/// Numerically stable row-wise softmax.
pub(crate) fn softmax_rows(logits: &[f32], classes: usize, out: &mut [f32]) {
    for (row, dst) in logits.chunks_exact(classes).zip(out.chunks_exact_mut(classes)) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for (d, v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
}
