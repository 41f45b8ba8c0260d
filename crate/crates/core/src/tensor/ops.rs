use super::{check_extent, Kernel4, Matrix, Tensor4};
use crate::error::{shape_err, Result};
use crate::instrument;

/// Embeds a 1x1, 1x3 or 3x1 kernel in the centre of a zero 3x3 kernel.
/// A 3x3 kernel is returned unchanged.
pub fn pad_kernel_to_3x3(k: &Kernel4) -> Result<Kernel4> {
    let (co, ci, kh, kw) = k.shape();
    check_extent(kh, kw)?;
    if (kh, kw) == (3, 3) {
        return Ok(k.clone());
    }
    let (dr, ds) = ((3 - kh) / 2, (3 - kw) / 2);
    let mut out = Kernel4::zeros(co, ci, 3, 3)?;
    for o in 0..co {
        for i in 0..ci {
            for r in 0..kh {
                for s in 0..kw {
                    out.set(o, i, r + dr, s + ds, k.get(o, i, r, s));
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pad_kernel_to_3x3`]: crops the centre `kh x kw` window.
pub fn crop_kernel_from_3x3(k: &Kernel4, kh: usize, kw: usize) -> Result<Kernel4> {
    check_extent(kh, kw)?;
    if k.kh() != 3 || k.kw() != 3 {
        return Err(shape_err!("crop expects a 3x3 kernel, got {}x{}", k.kh(), k.kw()));
    }
    let (dr, ds) = ((3 - kh) / 2, (3 - kw) / 2);
    let mut out = Kernel4::zeros(k.co(), k.ci(), kh, kw)?;
    for o in 0..k.co() {
        for i in 0..k.ci() {
            for r in 0..kh {
                for s in 0..kw {
                    out.set(o, i, r, s, k.get(o, i, r + dr, s + ds));
                }
            }
        }
    }
    Ok(out)
}

/// The shortcut branch as a convolution: `(c, c, 3, 3)` with a unit centre tap
/// on the channel diagonal.
pub fn identity_kernel(c: usize) -> Kernel4 {
    let mut k = Kernel4::zeros(c.max(1), c.max(1), 3, 3).expect("valid extent");
    for o in 0..c {
        k.set(o, o, 1, 1, 1.0);
    }
    k
}

/// The shortcut branch as a bare `(c, c, 1, 1)` identity matrix.
pub fn identity_kernel_1x1(c: usize) -> Kernel4 {
    let mut k = Kernel4::zeros(c.max(1), c.max(1), 1, 1).expect("valid extent");
    for o in 0..c {
        k.set(o, o, 0, 0, 1.0);
    }
    k
}

/// Mode-3 product of a channel vector with an activation tensor:
/// `out[n, c, i, j] = w[c] * x[n, c, i, j]`.
pub fn channel_scale(x: &Tensor4, w: &[f64]) -> Result<Tensor4> {
    let (n, c, h, wd) = x.shape();
    if w.len() != c {
        return Err(shape_err!("channel_scale: {} weights for {c} channels", w.len()));
    }
    instrument::record_channel_scale((n * c * h * wd) as u64);
    let plane = h * wd;
    let mut out = x.clone();
    for (idx, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let s = w[idx % c];
        chunk.iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

/// Mode-1 product scaling the output-channel axis of a kernel:
/// `out[o, i, r, s] = w[o] * k[o, i, r, s]`.
pub fn kernel_channel_scale(k: &Kernel4, w: &[f64]) -> Result<Kernel4> {
    let (co, ci, kh, kw) = k.shape();
    if w.len() != co {
        return Err(shape_err!("kernel_channel_scale: {} weights for {co} output channels", w.len()));
    }
    instrument::record_kernel_scale((co * ci * kh * kw) as u64);
    let block = ci * kh * kw;
    let mut out = k.clone();
    for (chunk, s) in out.data_mut().chunks_mut(block).zip(w) {
        chunk.iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(shape_err!("matmul: {}x{} times {}x{}", a.rows(), a.cols(), b.rows(), b.cols()));
    }
    Ok(Matrix::new(a.rows(), b.cols(), matmul_raw(a.data(), b.data(), a.rows(), a.cols(), b.cols()))
        .expect("product shape"))
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    instrument::record_matmul((m * k * n) as u64);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn transpose(m: &Matrix) -> Matrix {
    Matrix::new(m.cols(), m.rows(), transpose_raw(m.data(), m.rows(), m.cols())).expect("transposed shape")
}

pub(crate) fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Column-wise softmax: each column (one output channel) becomes a
/// distribution over the rows (branches).
pub fn softmax_over_branches(m: &Matrix) -> Matrix {
    Matrix::new(m.rows(), m.cols(), softmax_columns_raw(m.data(), m.rows(), m.cols())).expect("same shape")
}

pub(crate) fn softmax_columns_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for c in 0..cols {
        let max = (0..rows).map(|r| a[r * cols + c]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for r in 0..rows {
            let e = (a[r * cols + c] - max).exp();
            out[r * cols + c] = e;
            sum += e;
        }
        for r in 0..rows {
            out[r * cols + c] /= sum;
        }
    }
    out
}

/// `(1, c, h, w)` to `(h*w) x c`, rows in raster order.
pub fn flatten_spatial(x: &Tensor4) -> Result<Matrix> {
    let (n, c, h, w) = x.shape();
    if n != 1 {
        return Err(shape_err!("flatten_spatial expects a single sample, got batch {n}"));
    }
    Matrix::new(h * w, c, transpose_raw(x.data(), c, h * w))
}

/// Inverse of [`flatten_spatial`].
pub fn unflatten_spatial(m: &Matrix, h: usize, w: usize) -> Result<Tensor4> {
    if m.rows() != h * w {
        return Err(shape_err!("unflatten: {} rows for {h}x{w}", m.rows()));
    }
    Tensor4::new(1, m.cols(), h, w, transpose_raw(m.data(), m.rows(), m.cols()))
}

pub fn relu(x: &Tensor4) -> Tensor4 {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// 2x2 average pooling, stride 2; a trailing odd row or column is dropped.
pub fn avg_pool2(x: &Tensor4) -> Result<Tensor4> {
    let (n, c, h, w) = x.shape();
    if h < 2 || w < 2 {
        return Err(shape_err!("avg_pool2 needs at least 2x2, got {h}x{w}"));
    }
    let (oh, ow) = (h / 2, w / 2);
    Ok(Tensor4::from_fn(n, c, oh, ow, |b, ch, i, j| {
        0.25 * (x.get(b, ch, 2 * i, 2 * j)
            + x.get(b, ch, 2 * i, 2 * j + 1)
            + x.get(b, ch, 2 * i + 1, 2 * j)
            + x.get(b, ch, 2 * i + 1, 2 * j + 1))
    }))
}

/// Mean over the spatial extent: `(n, c, h, w)` to an `n x c` matrix.
pub fn global_avg_pool(x: &Tensor4) -> Matrix {
    let (n, c, h, w) = x.shape();
    let plane = h * w;
    let data = x.data().chunks(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
    Matrix::new(n, c, data).expect("pooled shape")
}

pub fn add(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    if a.shape() != b.shape() {
        return Err(shape_err!("add: {:?} vs {:?}", a.shape(), b.shape()));
    }
    let mut out = a.clone();
    out.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
    Ok(out)
}

pub fn scale(a: &Tensor4, s: f64) -> Tensor4 {
    let mut out = a.clone();
    out.data_mut().iter_mut().for_each(|v| *v *= s);
    out
}
