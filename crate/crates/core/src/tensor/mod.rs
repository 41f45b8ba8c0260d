//! Dense f64 tensors and the primitives the layer is built from.
//!
//! Activations are [`Tensor4`] in `(n, c, h, w)` row-major order, convolution
//! weights are [`Kernel4`] in `(co, ci, kh, kw)` order, and attention
//! quantities are row-major [`Matrix`] values. [`Array`] is the untyped form
//! used by the tape and the checkpoint format.

mod conv;
mod ops;

pub use conv::conv2d;
pub(crate) use conv::{conv2d_grad_input, conv2d_grad_kernel, conv2d_raw, ConvGeom};
pub use ops::*;

use crate::error::{shape_err, Error, Result};

/// Untyped dense array: dims plus row-major data.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(shape_err!("dims {dims:?} need {len} values, got {}", data.len()));
        }
        Ok(Array { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Array { dims, data: vec![0.0; len] }
    }

    pub fn scalar(v: f64) -> Self {
        Array { dims: vec![], data: vec![v] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn dims4(&self) -> Result<[usize; 4]> {
        match self.dims[..] {
            [a, b, c, d] => Ok([a, b, c, d]),
            _ => Err(shape_err!("expected rank 4, got dims {:?}", self.dims)),
        }
    }

    pub(crate) fn dims2(&self) -> Result<[usize; 2]> {
        match self.dims[..] {
            [a, b] => Ok([a, b]),
            _ => Err(shape_err!("expected rank 2, got dims {:?}", self.dims)),
        }
    }
}

/// Activation tensor `(n, c, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(shape_err!("tensor extents must be >= 1, got ({n}, {c}, {h}, {w})"));
        }
        if data.len() != n * c * h * w {
            return Err(shape_err!("tensor ({n}, {c}, {h}, {w}) needs {} values, got {}", n * c * h * w, data.len()));
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4 { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    pub fn from_fn(
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        data.push(f(b, ch, i, j));
                    }
                }
            }
        }
        Tensor4 { n, c, h, w, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn c(&self) -> usize {
        self.c
    }
    pub fn h(&self) -> usize {
        self.h
    }
    pub fn w(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, i: usize, j: usize) -> f64 {
        self.data[((n * self.c + c) * self.h + i) * self.w + j]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, i: usize, j: usize, v: f64) {
        let idx = ((n * self.c + c) * self.h + i) * self.w + j;
        self.data[idx] = v;
    }

    /// Copy of sample `i` as a batch-of-one tensor.
    pub fn sample(&self, i: usize) -> Result<Tensor4> {
        if i >= self.n {
            return Err(shape_err!("sample {i} out of range for batch {}", self.n));
        }
        let plane = self.c * self.h * self.w;
        Ok(Tensor4 { n: 1, c: self.c, h: self.h, w: self.w, data: self.data[i * plane..(i + 1) * plane].to_vec() })
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack(parts: &[Tensor4]) -> Result<Tensor4> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("cannot stack zero tensors".into()))?;
        let (_, c, h, w) = first.shape();
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if (p.c, p.h, p.w) != (c, h, w) {
                return Err(shape_err!("cannot stack {:?} with {:?}", p.shape(), first.shape()));
            }
            n += p.n;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest elementwise absolute difference; errors on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor4) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(shape_err!("{:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(max_abs_diff(&self.data, &other.data))
    }
}

impl From<Tensor4> for Array {
    fn from(t: Tensor4) -> Array {
        Array { dims: vec![t.n, t.c, t.h, t.w], data: t.data }
    }
}

impl TryFrom<Array> for Tensor4 {
    type Error = Error;

    fn try_from(a: Array) -> Result<Tensor4> {
        let [n, c, h, w] = a.dims4()?;
        Tensor4::new(n, c, h, w, a.data)
    }
}

/// Convolution weights `(co, ci, kh, kw)` with `kh, kw` in `{1, 3}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel4 {
    co: usize,
    ci: usize,
    kh: usize,
    kw: usize,
    data: Vec<f64>,
}

pub(crate) fn check_extent(kh: usize, kw: usize) -> Result<()> {
    match (kh, kw) {
        (3, 3) | (1, 3) | (3, 1) | (1, 1) => Ok(()),
        _ => Err(Error::KernelExtent { kh, kw }),
    }
}

impl Kernel4 {
    pub fn new(co: usize, ci: usize, kh: usize, kw: usize, data: Vec<f64>) -> Result<Self> {
        check_extent(kh, kw)?;
        if co == 0 || ci == 0 {
            return Err(shape_err!("kernel channel counts must be >= 1, got ({co}, {ci})"));
        }
        if data.len() != co * ci * kh * kw {
            return Err(shape_err!(
                "kernel ({co}, {ci}, {kh}, {kw}) needs {} values, got {}",
                co * ci * kh * kw,
                data.len()
            ));
        }
        Ok(Kernel4 { co, ci, kh, kw, data })
    }

    pub fn zeros(co: usize, ci: usize, kh: usize, kw: usize) -> Result<Self> {
        Kernel4::new(co, ci, kh, kw, vec![0.0; co * ci * kh * kw])
    }

    pub fn co(&self) -> usize {
        self.co
    }
    pub fn ci(&self) -> usize {
        self.ci
    }
    pub fn kh(&self) -> usize {
        self.kh
    }
    pub fn kw(&self) -> usize {
        self.kw
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.co, self.ci, self.kh, self.kw)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, o: usize, i: usize, r: usize, s: usize) -> f64 {
        self.data[((o * self.ci + i) * self.kh + r) * self.kw + s]
    }

    #[inline]
    pub fn set(&mut self, o: usize, i: usize, r: usize, s: usize, v: f64) {
        let idx = ((o * self.ci + i) * self.kh + r) * self.kw + s;
        self.data[idx] = v;
    }

    /// Elementwise sum of two same-shaped kernels.
    pub fn add(&self, other: &Kernel4) -> Result<Kernel4> {
        if self.shape() != other.shape() {
            return Err(shape_err!("kernel {:?} + {:?}", self.shape(), other.shape()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Kernel4 { data, ..*self })
    }

    pub fn max_abs_diff(&self, other: &Kernel4) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(shape_err!("{:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(max_abs_diff(&self.data, &other.data))
    }
}

impl From<Kernel4> for Array {
    fn from(k: Kernel4) -> Array {
        Array { dims: vec![k.co, k.ci, k.kh, k.kw], data: k.data }
    }
}

impl TryFrom<Array> for Kernel4 {
    type Error = Error;

    fn try_from(a: Array) -> Result<Kernel4> {
        let [co, ci, kh, kw] = a.dims4()?;
        Kernel4::new(co, ci, kh, kw, a.data)
    }
}

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err!("matrix {rows}x{cols} needs {} values, got {}", rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err!("ragged rows"));
        }
        Ok(Matrix { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(r)) {
                *s += v;
            }
        }
        sums
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(shape_err!("{}x{} vs {}x{}", self.rows, self.cols, other.rows, other.cols));
        }
        Ok(max_abs_diff(&self.data, &other.data))
    }
}

impl From<Matrix> for Array {
    fn from(m: Matrix) -> Array {
        Array { dims: vec![m.rows, m.cols], data: m.data }
    }
}

impl TryFrom<Array> for Matrix {
    type Error = Error;

    fn try_from(a: Array) -> Result<Matrix> {
        let [rows, cols] = a.dims2()?;
        Matrix::new(rows, cols, a.data)
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
