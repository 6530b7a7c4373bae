//! Dense row-major f64 tensors and the raw kernels behind every tape
//! operation.
//!
//! Shapes are dynamic (`Vec<usize>`); a scalar has the empty shape. 2-D
//! tensors are matrices in row-major order. Convolution activations use the
//! channel-major layout `[c, n, h, w]` so that an im2col product lands in
//! the output buffer without a permutation pass.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::BadShape {
                op: "Tensor::new",
                shape,
                count: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let count = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; count],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let count = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; count],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.shape[1] + j] = v;
    }

    /// Reinterpret as a different shape with the same element count.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let count: usize = shape.iter().product();
        if count != self.data.len() {
            return Err(Error::BadShape {
                op: "reshape",
                shape,
                count: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise and matrix kernels
// ---------------------------------------------------------------------------

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    a.map(|x| c * x)
}

pub fn relu(a: &Tensor) -> Tensor {
    a.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// Numerically safe `log(1 + exp(x))`.
pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of softplus.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(a: &Tensor) -> Tensor {
    a.map(softplus_scalar)
}

pub fn sum_all(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data.iter().sum())
}

pub fn mean_all(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data.iter().sum::<f64>() / a.data.len() as f64)
}

/// `a + I` for a square matrix.
pub fn add_eye(a: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || a.shape[0] != a.shape[1] {
        return Err(Error::ShapeMismatch {
            op: "add_eye",
            left: a.shape.clone(),
            right: a.shape.clone(),
        });
    }
    let n = a.shape[0];
    let mut out = a.clone();
    for i in 0..n {
        out.data[i * n + i] += 1.0;
    }
    Ok(out)
}

pub fn transpose(a: &Tensor) -> Tensor {
    debug_assert_eq!(a.shape.len(), 2);
    let (r, c) = (a.shape[0], a.shape[1]);
    let mut out = Tensor::zeros(&[c, r]);
    for i in 0..r {
        for j in 0..c {
            out.data[j * r + i] = a.data[i * c + j];
        }
    }
    out
}

/// Dense matrix product via the blocked dgemm kernel.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = Tensor::zeros(&[m, n]);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            n as isize,
            1,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(out)
}

/// Add a length-`r` vector to every column of an `r x c` matrix.
pub fn add_col_vec(mat: &Tensor, v: &Tensor) -> Result<Tensor> {
    if mat.shape.len() != 2 || v.shape.len() != 1 || v.shape[0] != mat.shape[0] {
        return Err(Error::ShapeMismatch {
            op: "add_col_vec",
            left: mat.shape.clone(),
            right: v.shape.clone(),
        });
    }
    let (r, c) = (mat.shape[0], mat.shape[1]);
    let mut out = mat.clone();
    for i in 0..r {
        let vi = v.data[i];
        for j in 0..c {
            out.data[i * c + j] += vi;
        }
    }
    Ok(out)
}

/// Row-wise sums of a matrix: the adjoint of `add_col_vec` w.r.t. the vector.
pub fn row_sums(mat: &Tensor) -> Tensor {
    let (r, c) = (mat.shape[0], mat.shape[1]);
    let mut out = Tensor::zeros(&[r]);
    for i in 0..r {
        out.data[i] = mat.data[i * c..(i + 1) * c].iter().sum();
    }
    out
}

pub fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[0] != b.shape[0] {
        return Err(Error::ShapeMismatch {
            op: "concat_cols",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (r, ca, cb) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = Tensor::zeros(&[r, ca + cb]);
    for i in 0..r {
        out.data[i * (ca + cb)..i * (ca + cb) + ca].copy_from_slice(&a.data[i * ca..(i + 1) * ca]);
        out.data[i * (ca + cb) + ca..(i + 1) * (ca + cb)]
            .copy_from_slice(&b.data[i * cb..(i + 1) * cb]);
    }
    Ok(out)
}

pub fn select_cols(a: &Tensor, idx: &[usize]) -> Tensor {
    debug_assert_eq!(a.shape.len(), 2);
    let (r, c) = (a.shape[0], a.shape[1]);
    let k = idx.len();
    let mut out = Tensor::zeros(&[r, k]);
    for i in 0..r {
        for (jj, &j) in idx.iter().enumerate() {
            debug_assert!(j < c);
            out.data[i * k + jj] = a.data[i * c + j];
        }
    }
    out
}

/// Adjoint of `select_cols`: scatter-add `grad` columns back at `idx`.
pub fn scatter_add_cols(target: &mut Tensor, idx: &[usize], grad: &Tensor) {
    let (r, c) = (target.shape[0], target.shape[1]);
    let k = idx.len();
    debug_assert_eq!(grad.shape(), &[r, k]);
    for i in 0..r {
        for (jj, &j) in idx.iter().enumerate() {
            target.data[i * c + j] += grad.data[i * k + jj];
        }
    }
}

/// Normalize every column to unit Euclidean norm. Returns the normalized
/// matrix and the original column norms (needed by the adjoint).
#[allow(clippy::needless_range_loop)] // strided column indexing
pub fn l2_normalize_cols(a: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    debug_assert_eq!(a.shape.len(), 2);
    let (r, c) = (a.shape[0], a.shape[1]);
    let mut norms = vec![0.0; c];
    for j in 0..c {
        let mut s = 0.0;
        for i in 0..r {
            let x = a.data[i * c + j];
            s += x * x;
        }
        let norm = s.sqrt();
        if norm <= 1e-12 {
            return Err(Error::DegenerateFeature { column: j, norm });
        }
        norms[j] = norm;
    }
    let mut out = a.clone();
    for j in 0..c {
        let inv = 1.0 / norms[j];
        for i in 0..r {
            out.data[i * c + j] *= inv;
        }
    }
    Ok((out, norms))
}

// ---------------------------------------------------------------------------
// convolution kernels (channel-major [c, n, h, w] activations)
// ---------------------------------------------------------------------------

#[derive(Debug, Copy, Clone)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
}

pub fn conv_out_extent(extent: usize, k: usize, stride: usize, pad: usize) -> usize {
    (extent + 2 * pad - k) / stride + 1
}

/// Output positions whose receptive field stays inside `[0, extent)` for a
/// fixed kernel offset: the half-open `ox` range with
/// `0 <= ox*stride + k_off - pad < extent`.
fn valid_range(
    out_extent: usize,
    extent: usize,
    k_off: usize,
    stride: usize,
    pad: usize,
) -> (usize, usize) {
    let lo = pad.saturating_sub(k_off).div_ceil(stride);
    let hi = if extent + pad > k_off {
        ((extent + pad - k_off - 1) / stride + 1).min(out_extent)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Gather the im2col matrix `[ic*kh*kw, n*oh*ow]` from a `[ic, n, h, w]`
/// activation tensor.
fn im2col(input: &Tensor, kh: usize, kw: usize, spec: &ConvSpec) -> Tensor {
    let (ic, n, h, w) = (
        input.shape[0],
        input.shape[1],
        input.shape[2],
        input.shape[3],
    );
    let oh = conv_out_extent(h, kh, spec.stride, spec.pad);
    let ow = conv_out_extent(w, kw, spec.stride, spec.pad);
    let ncols = n * oh * ow;
    let mut cols = Tensor::zeros(&[ic * kh * kw, ncols]);
    for c in 0..ic {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let out_row = &mut cols.data[row * ncols..(row + 1) * ncols];
                // valid ox range solves 0 <= ox*stride + kx - pad < w once
                let (lo, hi) = valid_range(ow, w, kx, spec.stride, spec.pad);
                for i in 0..n {
                    let img = &input.data[(c * n + i) * h * w..(c * n + i + 1) * h * w];
                    for oy in 0..oh {
                        let y = (oy * spec.stride + ky) as isize - spec.pad as isize;
                        let dst = &mut out_row[(i * oh + oy) * ow..(i * oh + oy + 1) * ow];
                        if y < 0 || y >= h as isize {
                            continue; // zero padding, buffer already cleared
                        }
                        let src_row = &img[y as usize * w..(y as usize + 1) * w];
                        if spec.stride == 1 {
                            let shift = lo * spec.stride + kx - spec.pad;
                            dst[lo..hi].copy_from_slice(&src_row[shift..shift + (hi - lo)]);
                        } else {
                            for ox in lo..hi {
                                dst[ox] = src_row[ox * spec.stride + kx - spec.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add columns back into a `[ic, n, h, w]` gradient: the adjoint of
/// `im2col`.
#[allow(clippy::needless_range_loop)] // strided column indexing
fn col2im_add(dcols: &Tensor, dinput: &mut Tensor, kh: usize, kw: usize, spec: &ConvSpec) {
    let (ic, n, h, w) = (
        dinput.shape[0],
        dinput.shape[1],
        dinput.shape[2],
        dinput.shape[3],
    );
    let oh = conv_out_extent(h, kh, spec.stride, spec.pad);
    let ow = conv_out_extent(w, kw, spec.stride, spec.pad);
    let ncols = n * oh * ow;
    for c in 0..ic {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let src_row = &dcols.data[row * ncols..(row + 1) * ncols];
                let (lo, hi) = valid_range(ow, w, kx, spec.stride, spec.pad);
                for i in 0..n {
                    let base = (c * n + i) * h * w;
                    for oy in 0..oh {
                        let y = (oy * spec.stride + ky) as isize - spec.pad as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        let src = &src_row[(i * oh + oy) * ow..(i * oh + oy + 1) * ow];
                        let row_base = base + y as usize * w + kx;
                        for ox in lo..hi {
                            dinput.data[row_base + ox * spec.stride - spec.pad] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution: `[ic, n, h, w]` input, `[oc, ic, kh, kw]` weights,
/// `[oc]` bias, producing `[oc, n, oh, ow]`.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    if input.shape.len() != 4 || weight.shape.len() != 4 || input.shape[0] != weight.shape[1] {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: input.shape.clone(),
            right: weight.shape.clone(),
        });
    }
    let (oc, ic, kh, kw) = (
        weight.shape[0],
        weight.shape[1],
        weight.shape[2],
        weight.shape[3],
    );
    let (n, h, w) = (input.shape[1], input.shape[2], input.shape[3]);
    let oh = conv_out_extent(h, kh, spec.stride, spec.pad);
    let ow = conv_out_extent(w, kw, spec.stride, spec.pad);
    let cols = im2col(input, kh, kw, spec);
    let wmat = Tensor {
        shape: vec![oc, ic * kh * kw],
        data: weight.data.clone(),
    };
    let mut out = matmul(&wmat, &cols)?;
    let ncols = n * oh * ow;
    for c in 0..oc {
        let b = bias.data[c];
        for v in &mut out.data[c * ncols..(c + 1) * ncols] {
            *v += b;
        }
    }
    out.reshaped(vec![oc, n, oh, ow])
}

/// Gradients of `conv2d` w.r.t. input, weight and bias. The im2col matrix is
/// recomputed rather than stored across the forward pass; the input gradient
/// (the expensive half) is only built when requested.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    spec: &ConvSpec,
    need_dinput: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let (oc, ic, kh, kw) = (
        weight.shape[0],
        weight.shape[1],
        weight.shape[2],
        weight.shape[3],
    );
    let (n, oh, ow) = (grad_out.shape[1], grad_out.shape[2], grad_out.shape[3]);
    let ncols = n * oh * ow;
    let gmat = Tensor {
        shape: vec![oc, ncols],
        data: grad_out.data.clone(),
    };

    let cols = im2col(input, kh, kw, spec);
    let dw = matmul(&gmat, &transpose(&cols))?.reshaped(vec![oc, ic, kh, kw])?;
    let dbias = row_sums(&gmat);

    let dinput = if need_dinput {
        let wmat = Tensor {
            shape: vec![oc, ic * kh * kw],
            data: weight.data.clone(),
        };
        let dcols = matmul(&transpose(&wmat), &gmat)?;
        let mut dinput = Tensor::zeros(input.shape());
        col2im_add(&dcols, &mut dinput, kh, kw, spec);
        Some(dinput)
    } else {
        None
    };
    Ok((dinput, dw, dbias))
}

/// Average over the spatial extent: `[c, n, h, w]` to a `[c, n]` matrix.
pub fn global_avg_pool(input: &Tensor) -> Tensor {
    debug_assert_eq!(input.shape.len(), 4);
    let (c, n, h, w) = (
        input.shape[0],
        input.shape[1],
        input.shape[2],
        input.shape[3],
    );
    let hw = h * w;
    let mut out = Tensor::zeros(&[c, n]);
    for ci in 0..c {
        for i in 0..n {
            let s: f64 = input.data[(ci * n + i) * hw..(ci * n + i + 1) * hw]
                .iter()
                .sum();
            out.data[ci * n + i] = s / hw as f64;
        }
    }
    out
}

pub fn global_avg_pool_backward(grad: &Tensor, like: &Tensor) -> Tensor {
    let (c, n, h, w) = (like.shape[0], like.shape[1], like.shape[2], like.shape[3]);
    let hw = h * w;
    let mut out = Tensor::zeros(like.shape());
    for ci in 0..c {
        for i in 0..n {
            let g = grad.data[ci * n + i] / hw as f64;
            for v in &mut out.data[(ci * n + i) * hw..(ci * n + i + 1) * hw] {
                *v = g;
            }
        }
    }
    out
}
