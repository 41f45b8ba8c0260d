//! Reverse-mode differentiation over the tensor primitives.
//!
//! A [`Tape`] records every operation in evaluation order, so node indices
//! are already a topological order and [`Tape::backward`] is a single
//! reverse sweep. Gradients accumulate on fan-out.

mod check;
mod param;

pub use check::{finite_diff_check, max_relative_error, numerical_gradient, relative_error, GradCheck};
pub use param::{ParamSet, Parameter};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{
    conv2d_grad_input, conv2d_grad_kernel, conv2d_raw, matmul_raw, softmax_columns_raw, transpose_raw, Array, ConvGeom,
};
use crate::{instrument, tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Input or parameter; no inputs.
    Leaf,
    /// `x (n,c,h,w)`, `k (co,ci,kh,kw)`.
    Conv2d {
        x: Var,
        k: Var,
        pad_h: usize,
        pad_w: usize,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Transpose {
        a: Var,
    },
    SoftmaxBranches {
        a: Var,
    },
    /// `x (n,c,h,w)` scaled per channel by `w (c)`.
    ChannelScale {
        x: Var,
        w: Var,
    },
    /// `k (co,ci,kh,kw)` scaled per output channel by `w (co)`.
    KernelChannelScale {
        k: Var,
        w: Var,
    },
    PadKernel {
        k: Var,
    },
    FlattenSpatial {
        x: Var,
    },
    /// Row `index` of a matrix, as a vector.
    Row {
        a: Var,
        index: usize,
    },
    Scale {
        a: Var,
        factor: f64,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Relu {
        a: Var,
    },
    AvgPool2 {
        a: Var,
    },
    GlobalAvgPool {
        a: Var,
    },
    SliceBatch {
        x: Var,
        index: usize,
    },
    StackBatch {
        parts: Vec<Var>,
    },
    /// `a (n,k)` plus bias `b (k)` broadcast over rows.
    AddRowBias {
        a: Var,
        b: Var,
    },
    Sum {
        a: Var,
    },
    /// Mean squared error against a constant target.
    Mse {
        a: Var,
        target: Array,
    },
    /// Mean softmax cross-entropy of `logits (n,k)` against class labels.
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Conv2d { x, k, .. } => vec![*x, *k],
            MatMul { a, b } | Add { a, b } | Mul { a, b } | AddRowBias { a, b } => vec![*a, *b],
            ChannelScale { x, w } => vec![*x, *w],
            KernelChannelScale { k, w } => vec![*k, *w],
            Transpose { a }
            | SoftmaxBranches { a }
            | Row { a, .. }
            | Scale { a, .. }
            | Relu { a }
            | AvgPool2 { a }
            | GlobalAvgPool { a }
            | Sum { a }
            | Mse { a, .. } => vec![*a],
            PadKernel { k } => vec![*k],
            FlattenSpatial { x } | SliceBatch { x, .. } => vec![*x],
            StackBatch { parts } => parts.clone(),
            CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Array,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward sweep, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    /// `None` when the node does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros when unreachable.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Array {
        self.get(v).cloned().unwrap_or_else(|| Array::zeros(tape.value(v).dims().to_vec()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    /// Appends a node whose inputs must already be on the tape.
    pub fn record(&mut self, op: Op, value: Array) -> Result<Var> {
        if let Some(bad) = op.inputs().into_iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::DanglingNode(bad.0));
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Array) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<&Array> {
        self.nodes.get(v.0).map(|n| &n.value).ok_or(Error::DanglingNode(v.0))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, pad_h: usize, pad_w: usize) -> Result<Var> {
        let (xv, kv) = (self.check(x)?, self.check(k)?);
        let g = ConvGeom::new(xv.dims4()?, kv.dims4()?, pad_h, pad_w)?;
        let out = conv2d_raw(xv.data(), kv.data(), &g);
        let value = Array::new(vec![g.n, g.co, g.oh, g.ow], out)?;
        self.record(Op::Conv2d { x, k, pad_h, pad_w }, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.check(a)?, self.check(b)?);
        let ([m, k], [k2, n]) = (av.dims2()?, bv.dims2()?);
        if k != k2 {
            return Err(shape_err!("matmul: {m}x{k} times {k2}x{n}"));
        }
        let value = Array::new(vec![m, n], matmul_raw(av.data(), bv.data(), m, k, n))?;
        self.record(Op::MatMul { a, b }, value)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.check(a)?;
        let [r, c] = av.dims2()?;
        let value = Array::new(vec![c, r], transpose_raw(av.data(), r, c))?;
        self.record(Op::Transpose { a }, value)
    }

    pub fn softmax_over_branches(&mut self, a: Var) -> Result<Var> {
        let av = self.check(a)?;
        let [r, c] = av.dims2()?;
        let value = Array::new(vec![r, c], softmax_columns_raw(av.data(), r, c))?;
        self.record(Op::SoftmaxBranches { a }, value)
    }

    pub fn channel_scale(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.check(x)?, self.check(w)?);
        let [n, c, h, wd] = xv.dims4()?;
        if wv.len() != c {
            return Err(shape_err!("channel_scale: {} weights for {c} channels", wv.len()));
        }
        instrument::record_channel_scale((n * c * h * wd) as u64);
        let plane = h * wd;
        let mut out = xv.clone();
        for (idx, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let s = wv.data()[idx % c];
            chunk.iter_mut().for_each(|v| *v *= s);
        }
        self.record(Op::ChannelScale { x, w }, out)
    }

    pub fn kernel_channel_scale(&mut self, k: Var, w: Var) -> Result<Var> {
        let (kv, wv) = (self.check(k)?, self.check(w)?);
        let [co, ci, kh, kw] = kv.dims4()?;
        if wv.len() != co {
            return Err(shape_err!("kernel_channel_scale: {} weights for {co} output channels", wv.len()));
        }
        instrument::record_kernel_scale((co * ci * kh * kw) as u64);
        let mut out = kv.clone();
        for (chunk, s) in out.data_mut().chunks_mut(ci * kh * kw).zip(wv.data()) {
            chunk.iter_mut().for_each(|v| *v *= s);
        }
        self.record(Op::KernelChannelScale { k, w }, out)
    }

    pub fn pad_kernel(&mut self, k: Var) -> Result<Var> {
        let kv: tensor::Kernel4 = self.check(k)?.clone().try_into()?;
        let value = tensor::pad_kernel_to_3x3(&kv)?.into();
        self.record(Op::PadKernel { k }, value)
    }

    pub fn flatten_spatial(&mut self, x: Var) -> Result<Var> {
        let xv = self.check(x)?;
        let [n, c, h, w] = xv.dims4()?;
        if n != 1 {
            return Err(shape_err!("flatten_spatial expects a single sample, got batch {n}"));
        }
        let value = Array::new(vec![h * w, c], transpose_raw(xv.data(), c, h * w))?;
        self.record(Op::FlattenSpatial { x }, value)
    }

    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        let av = self.check(a)?;
        let [r, c] = av.dims2()?;
        if index >= r {
            return Err(shape_err!("row {index} of a {r}-row matrix"));
        }
        let value = Array::new(vec![c], av.data()[index * c..(index + 1) * c].to_vec())?;
        self.record(Op::Row { a, index }, value)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let mut value = self.check(a)?.clone();
        value.data_mut().iter_mut().for_each(|v| *v *= factor);
        self.record(Op::Scale { a, factor }, value)
    }

    fn same_dims(&self, a: Var, b: Var, what: &str) -> Result<(Array, &Array)> {
        let (av, bv) = (self.check(a)?, self.check(b)?);
        if av.dims() != bv.dims() {
            return Err(shape_err!("{what}: {:?} vs {:?}", av.dims(), bv.dims()));
        }
        Ok((av.clone(), bv))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (mut out, bv) = self.same_dims(a, b, "add")?;
        out.data_mut().iter_mut().zip(bv.data()).for_each(|(x, y)| *x += y);
        self.record(Op::Add { a, b }, out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (mut out, bv) = self.same_dims(a, b, "mul")?;
        out.data_mut().iter_mut().zip(bv.data()).for_each(|(x, y)| *x *= y);
        self.record(Op::Mul { a, b }, out)
    }

    /// Left-to-right sum of several same-shaped nodes.
    pub fn sum_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (first, rest) = terms.split_first().ok_or_else(|| Error::InvalidArgument("sum of zero terms".into()))?;
        rest.iter().try_fold(*first, |acc, t| self.add(acc, *t))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let mut value = self.check(a)?.clone();
        value.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.record(Op::Relu { a }, value)
    }

    pub fn avg_pool2(&mut self, a: Var) -> Result<Var> {
        let t: tensor::Tensor4 = self.check(a)?.clone().try_into()?;
        let value = tensor::avg_pool2(&t)?.into();
        self.record(Op::AvgPool2 { a }, value)
    }

    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let t: tensor::Tensor4 = self.check(a)?.clone().try_into()?;
        let value = tensor::global_avg_pool(&t).into();
        self.record(Op::GlobalAvgPool { a }, value)
    }

    pub fn slice_batch(&mut self, x: Var, index: usize) -> Result<Var> {
        let t: tensor::Tensor4 = self.check(x)?.clone().try_into()?;
        let value = t.sample(index)?.into();
        self.record(Op::SliceBatch { x, index }, value)
    }

    pub fn stack_batch(&mut self, parts: &[Var]) -> Result<Var> {
        let ts = parts
            .iter()
            .map(|p| self.check(*p).and_then(|a| tensor::Tensor4::try_from(a.clone())))
            .collect::<Result<Vec<_>>>()?;
        let value = tensor::Tensor4::stack(&ts)?.into();
        self.record(Op::StackBatch { parts: parts.to_vec() }, value)
    }

    pub fn add_row_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.check(a)?, self.check(b)?);
        let [_, k] = av.dims2()?;
        if bv.len() != k {
            return Err(shape_err!("bias of length {} for {k} columns", bv.len()));
        }
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(k) {
            row.iter_mut().zip(bv.data()).for_each(|(x, y)| *x += y);
        }
        self.record(Op::AddRowBias { a, b }, out)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.check(a)?.data().iter().sum();
        self.record(Op::Sum { a }, Array::scalar(s))
    }

    pub fn mse(&mut self, a: Var, target: Array) -> Result<Var> {
        let av = self.check(a)?;
        if av.dims() != target.dims() {
            return Err(shape_err!("mse: {:?} vs target {:?}", av.dims(), target.dims()));
        }
        let n = av.len().max(1) as f64;
        let s = av.data().iter().zip(target.data()).map(|(x, t)| (x - t) * (x - t)).sum::<f64>() / n;
        self.record(Op::Mse { a, target }, Array::scalar(s))
    }

    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.check(logits)?;
        let [n, k] = lv.dims2()?;
        if labels.len() != n || labels.iter().any(|&l| l >= k) {
            return Err(shape_err!("cross_entropy: {} labels for {n} rows of {k} classes", labels.len()));
        }
        let probs = softmax_rows(lv.data(), n, k);
        let loss = labels.iter().enumerate().map(|(i, &l)| -probs[i * k + l].max(f64::MIN_POSITIVE).ln()).sum::<f64>()
            / n as f64;
        self.record(Op::CrossEntropy { logits, labels: labels.to_vec() }, Array::scalar(loss))
    }

    /// Reverse sweep from a scalar `loss`, seeding it with gradient 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.check(loss)?;
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.len()));
        }
        self.backward_with(loss, Array::new(lv.dims().to_vec(), vec![1.0])?)
    }

    /// Reverse sweep seeded with an arbitrary upstream gradient for `root`.
    pub fn backward_with(&self, root: Var, seed: Array) -> Result<Gradients> {
        let rv = self.check(root)?;
        if rv.dims() != seed.dims() {
            return Err(shape_err!("seed {:?} for node of dims {:?}", seed.dims(), rv.dims()));
        }
        let mut grads: Vec<Option<Array>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            for (input, contrib) in self.pullback(idx, &g)? {
                accumulate(&mut grads[input.0], contrib);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn pullback(&self, idx: usize, g: &Array) -> Result<Vec<(Var, Array)>> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let like = |v: Var, data: Vec<f64>| Array::new(val(v).dims().to_vec(), data);
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { x, k, pad_h, pad_w } => {
                let geom = ConvGeom::new(val(*x).dims4()?, val(*k).dims4()?, *pad_h, *pad_w)?;
                vec![
                    (*x, like(*x, conv2d_grad_input(g.data(), val(*k).data(), &geom))?),
                    (*k, like(*k, conv2d_grad_kernel(val(*x).data(), g.data(), &geom))?),
                ]
            }
            Op::MatMul { a, b } => {
                let [m, k] = val(*a).dims2()?;
                let [_, n] = val(*b).dims2()?;
                let bt = transpose_raw(val(*b).data(), k, n);
                let at = transpose_raw(val(*a).data(), m, k);
                vec![
                    (*a, like(*a, matmul_raw(g.data(), &bt, m, n, k))?),
                    (*b, like(*b, matmul_raw(&at, g.data(), k, m, n))?),
                ]
            }
            Op::Transpose { a } => {
                let [r, c] = val(*a).dims2()?;
                vec![(*a, like(*a, transpose_raw(g.data(), c, r))?)]
            }
            Op::SoftmaxBranches { a } => {
                let [r, c] = val(*a).dims2()?;
                let y = node.value.data();
                let gd = g.data();
                let mut out = vec![0.0; r * c];
                for col in 0..c {
                    let dot: f64 = (0..r).map(|i| gd[i * c + col] * y[i * c + col]).sum();
                    for i in 0..r {
                        out[i * c + col] = y[i * c + col] * (gd[i * c + col] - dot);
                    }
                }
                vec![(*a, like(*a, out)?)]
            }
            Op::ChannelScale { x, w } => {
                let [_, c, h, wd] = val(*x).dims4()?;
                let plane = h * wd;
                let (xd, wv) = (val(*x).data(), val(*w).data());
                let mut gx = g.clone().into_data();
                let mut gw = vec![0.0; c];
                for (idx, chunk) in gx.chunks_mut(plane).enumerate() {
                    let ch = idx % c;
                    let xs = &xd[idx * plane..(idx + 1) * plane];
                    gw[ch] += chunk.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                    chunk.iter_mut().for_each(|v| *v *= wv[ch]);
                }
                vec![(*x, like(*x, gx)?), (*w, like(*w, gw)?)]
            }
            Op::KernelChannelScale { k, w } => {
                let [co, ci, kh, kw] = val(*k).dims4()?;
                let block = ci * kh * kw;
                let (kd, wv) = (val(*k).data(), val(*w).data());
                let mut gk = g.clone().into_data();
                let mut gw = vec![0.0; co];
                for (o, chunk) in gk.chunks_mut(block).enumerate() {
                    gw[o] = chunk.iter().zip(&kd[o * block..(o + 1) * block]).map(|(a, b)| a * b).sum();
                    chunk.iter_mut().for_each(|v| *v *= wv[o]);
                }
                vec![(*k, like(*k, gk)?), (*w, like(*w, gw)?)]
            }
            Op::PadKernel { k } => {
                let [_, _, kh, kw] = val(*k).dims4()?;
                let gk: tensor::Kernel4 = g.clone().try_into()?;
                vec![(*k, tensor::crop_kernel_from_3x3(&gk, kh, kw)?.into())]
            }
            Op::FlattenSpatial { x } => {
                let [_, c, h, w] = val(*x).dims4()?;
                vec![(*x, like(*x, transpose_raw(g.data(), h * w, c))?)]
            }
            Op::Row { a, index } => {
                let [r, c] = val(*a).dims2()?;
                let mut out = vec![0.0; r * c];
                out[index * c..(index + 1) * c].copy_from_slice(g.data());
                vec![(*a, like(*a, out)?)]
            }
            Op::Scale { a, factor } => {
                vec![(*a, like(*a, g.data().iter().map(|v| v * factor).collect())?)]
            }
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul { a, b } => {
                let ga = g.data().iter().zip(val(*b).data()).map(|(x, y)| x * y).collect();
                let gb = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).collect();
                vec![(*a, like(*a, ga)?), (*b, like(*b, gb)?)]
            }
            Op::Relu { a } => {
                let ga = g.data().iter().zip(val(*a).data()).map(|(x, y)| if *y > 0.0 { *x } else { 0.0 }).collect();
                vec![(*a, like(*a, ga)?)]
            }
            Op::AvgPool2 { a } => {
                let [n, c, h, w] = val(*a).dims4()?;
                let (oh, ow) = (h / 2, w / 2);
                let mut ga = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let v = 0.25 * g.data()[(p * oh + i) * ow + j];
                            for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                ga[(p * h + 2 * i + di) * w + 2 * j + dj] += v;
                            }
                        }
                    }
                }
                vec![(*a, like(*a, ga)?)]
            }
            Op::GlobalAvgPool { a } => {
                let [_, _, h, w] = val(*a).dims4()?;
                let plane = h * w;
                let ga = g.data().iter().flat_map(|v| std::iter::repeat_n(v / plane as f64, plane)).collect();
                vec![(*a, like(*a, ga)?)]
            }
            Op::SliceBatch { x, index } => {
                let [_, c, h, w] = val(*x).dims4()?;
                let plane = c * h * w;
                let mut gx = vec![0.0; val(*x).len()];
                gx[index * plane..(index + 1) * plane].copy_from_slice(g.data());
                vec![(*x, like(*x, gx)?)]
            }
            Op::StackBatch { parts } => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for p in parts {
                    let len = val(*p).len();
                    out.push((*p, like(*p, g.data()[offset..offset + len].to_vec())?));
                    offset += len;
                }
                out
            }
            Op::AddRowBias { a, b } => {
                let k = val(*b).len();
                let mut gb = vec![0.0; k];
                for row in g.data().chunks(k) {
                    gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                }
                vec![(*a, g.clone()), (*b, like(*b, gb)?)]
            }
            Op::Sum { a } => {
                let s = g.data()[0];
                vec![(*a, like(*a, vec![s; val(*a).len()])?)]
            }
            Op::Mse { a, target } => {
                let s = g.data()[0];
                let n = val(*a).len().max(1) as f64;
                let ga = val(*a).data().iter().zip(target.data()).map(|(x, t)| s * 2.0 * (x - t) / n).collect();
                vec![(*a, like(*a, ga)?)]
            }
            Op::CrossEntropy { logits, labels } => {
                let s = g.data()[0];
                let [n, k] = val(*logits).dims2()?;
                let mut probs = softmax_rows(val(*logits).data(), n, k);
                for (i, &l) in labels.iter().enumerate() {
                    probs[i * k + l] -= 1.0;
                }
                probs.iter_mut().for_each(|v| *v *= s / n as f64);
                vec![(*logits, like(*logits, probs)?)]
            }
        })
    }
}

fn accumulate(slot: &mut Option<Array>, contrib: Array) {
    match slot {
        Some(acc) => acc.data_mut().iter_mut().zip(contrib.data()).for_each(|(a, b)| *a += b),
        None => *slot = Some(contrib),
    }
}

/// Row-wise softmax used by the classification loss.
pub fn softmax_rows(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let t = transpose_raw(a, rows, cols);
    transpose_raw(&softmax_columns_raw(&t, cols, rows), cols, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{identity_kernel, Kernel4, Tensor4};

    fn vals(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed.wrapping_add(0x9e3779b97f4a7c15);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn empty_tape_has_nothing_to_differentiate() {
        let tape = Tape::new();
        assert!(tape.is_empty());
        assert_eq!(tape.backward(Var(0)).unwrap_err(), Error::DanglingNode(0));
    }

    #[test]
    fn record_rejects_dangling_inputs() {
        let mut tape = Tape::new();
        let x = tape.leaf(Array::scalar(1.0));
        let err = tape.record(Op::Add { a: x, b: Var(5) }, Array::scalar(0.0)).unwrap_err();
        assert_eq!(err, Error::DanglingNode(5));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Array::zeros(vec![2, 2]));
        assert_eq!(tape.backward(x).unwrap_err(), Error::NonScalarLoss(4));
    }

    #[test]
    fn conv_sum_loss_gradient() {
        // d/dk sum(conv(x, k)) is the sum of x over each tap's valid window.
        let x = Tensor4::new(1, 1, 4, 4, vals(1, 16)).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone().into());
        let kv = tape.leaf(Kernel4::new(1, 1, 3, 3, vals(2, 9)).unwrap().into());
        let y = tape.conv2d(xv, kv, 1, 1).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gk = grads.get(kv).unwrap();
        for r in 0..3 {
            for s in 0..3 {
                let mut want = 0.0;
                for i in 0..4isize {
                    for j in 0..4isize {
                        let (iy, ix) = (i + r as isize - 1, j + s as isize - 1);
                        if (0..4).contains(&iy) && (0..4).contains(&ix) {
                            want += x.get(0, 0, iy as usize, ix as usize);
                        }
                    }
                }
                assert!((gk.data()[r * 3 + s] - want).abs() < 1e-12);
            }
        }
        // upstream all ones; input gradient at an interior pixel is the kernel sum
        let ksum: f64 = tape.value(kv).data().iter().sum();
        assert!((grads.get(xv).unwrap().data()[5] - ksum).abs() < 1e-12);
    }

    #[test]
    fn identity_conv_passes_gradient_through() {
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor4::new(1, 2, 3, 3, vals(3, 18)).unwrap().into());
        let kv = tape.leaf(identity_kernel(2).into());
        let y = tape.conv2d(xv, kv, 1, 1).unwrap();
        let up = Array::new(vec![1, 2, 3, 3], vals(4, 18)).unwrap();
        let grads = tape.backward_with(y, up.clone()).unwrap();
        assert_eq!(grads.get(xv).unwrap(), &up);
    }

    #[test]
    fn mse_at_minimum_is_flat() {
        let t = Array::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone());
        let loss = tape.mse(x, t).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cross_entropy_gradient_closed_form() {
        let logits = Array::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.0, 0.3, -0.7]).unwrap();
        let labels = [2, 0];
        let mut tape = Tape::new();
        let l = tape.leaf(logits.clone());
        let loss = tape.cross_entropy(l, &labels).unwrap();
        let g = tape.backward(loss).unwrap();
        for (i, label) in labels.iter().enumerate() {
            let row = &logits.data()[i * 3..i * 3 + 3];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            for (j, v) in row.iter().enumerate() {
                let p = v.exp() / z;
                let onehot = if *label == j { 1.0 } else { 0.0 };
                assert!((g.get(l).unwrap().data()[i * 3 + j] - (p - onehot) / 2.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_upstream_propagates_zeros() {
        let mut tape = Tape::new();
        let x = tape.leaf(Array::new(vec![2, 3], vals(8, 6)).unwrap());
        let w = tape.leaf(Array::new(vec![3, 2], vals(9, 6)).unwrap());
        let m = tape.matmul(x, w).unwrap();
        let s = tape.softmax_over_branches(m).unwrap();
        let g = tape.backward_with(s, Array::zeros(vec![2, 2])).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|v| *v == 0.0));
        assert!(g.get(w).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scaled_loss_scales_gradient_exactly() {
        let mut tape = Tape::new();
        let x = tape.leaf(Array::new(vec![4], vals(10, 4)).unwrap());
        let y = tape.mul(x, x).unwrap();
        let l = tape.sum(y).unwrap();
        let l2 = tape.scale(l, 4.0).unwrap();
        let g1 = tape.backward(l).unwrap().wrt(&tape, x);
        let g2 = tape.backward(l2).unwrap().wrt(&tape, x);
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert_eq!(4.0 * a, *b);
        }
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Array::scalar(3.0));
        let y = tape.add(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Array::scalar(3.0));
        let unused = tape.leaf(Array::zeros(vec![2]));
        let l = tape.scale(x, 2.0).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(&tape, unused), Array::zeros(vec![2]));
    }
}
