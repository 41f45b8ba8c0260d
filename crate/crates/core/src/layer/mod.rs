//! The dynamic re-parameterized convolution layer.
//!
//! A layer holds four bare branch kernels (3x3, 1x3, 3x1, 1x1), an identity
//! shortcut when `c_in == c_out`, and two pointwise convolutions `f1`, `f2`
//! that turn each input into a `B x c_out` column-stochastic weight matrix.
//!
//! Training runs every branch and mixes the outputs ([`DrpnLayer::forward_train`]).
//! Inference mixes the zero-padded kernels instead and runs one 3x3
//! convolution ([`DrpnLayer::forward_inference`]). Both compute the same
//! function; the weights are recomputed for every sample.

mod graph;

pub use graph::LayerVars;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{
    channel_scale, conv2d, flatten_spatial, identity_kernel, identity_kernel_1x1, kernel_channel_scale, matmul,
    pad_kernel_to_3x3, softmax_over_branches, transpose, Array, Kernel4, Matrix, Tensor4,
};

/// Branch row order of every weight matrix.
pub const BRANCH_NAMES: [&str; 5] = ["3x3", "1x3", "3x1", "1x1", "shortcut"];

/// Extents and "same" padding of the four convolution branches.
pub const BRANCH_GEOMETRY: [(usize, usize); 4] = [(3, 3), (1, 3), (3, 1), (1, 1)];

pub(crate) fn same_padding(kh: usize, kw: usize) -> (usize, usize) {
    ((kh - 1) / 2, (kw - 1) / 2)
}

/// The four convolution branch kernels, each `(c_out, c_in, kh, kw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchKernels {
    pub k3x3: Kernel4,
    pub k1x3: Kernel4,
    pub k3x1: Kernel4,
    pub k1x1: Kernel4,
}

impl BranchKernels {
    /// He-style gaussian init, `std = sqrt(2 / (ci * kh * kw))`.
    pub fn random<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Result<Self> {
        let mut make = |kh: usize, kw: usize| {
            let std = (2.0 / (c_in * kh * kw) as f64).sqrt();
            gaussian_kernel(c_out, c_in, kh, kw, std, rng)
        };
        Ok(BranchKernels { k3x3: make(3, 3)?, k1x3: make(1, 3)?, k3x1: make(3, 1)?, k1x1: make(1, 1)? })
    }

    pub fn as_array(&self) -> [&Kernel4; 4] {
        [&self.k3x3, &self.k1x3, &self.k3x1, &self.k1x1]
    }

    /// Checks extents and a common `(c_out, c_in)`; returns it.
    pub fn channels(&self) -> Result<(usize, usize)> {
        let (co, ci) = (self.k3x3.co(), self.k3x3.ci());
        for (k, (kh, kw)) in self.as_array().into_iter().zip(BRANCH_GEOMETRY) {
            if k.shape() != (co, ci, kh, kw) {
                return Err(shape_err!("branch kernel {:?}, expected ({co}, {ci}, {kh}, {kw})", k.shape()));
            }
        }
        Ok((co, ci))
    }
}

pub(crate) fn gaussian_kernel<R: Rng + ?Sized>(
    co: usize,
    ci: usize,
    kh: usize,
    kw: usize,
    std: f64,
    rng: &mut R,
) -> Result<Kernel4> {
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Kernel4::new(co, ci, kh, kw, (0..co * ci * kh * kw).map(|_| normal.sample(rng)).collect())
}

/// Attention matrix `W`: rows are branches in [`BRANCH_NAMES`] order, columns
/// are output channels.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchWeights {
    values: Matrix,
}

impl BranchWeights {
    pub fn new(values: Matrix) -> Result<Self> {
        if !(4..=5).contains(&values.rows()) || values.cols() == 0 {
            return Err(shape_err!(
                "branch weights must be 4 or 5 rows by c_out, got {}x{}",
                values.rows(),
                values.cols()
            ));
        }
        Ok(BranchWeights { values })
    }

    /// Same per-branch value in every output channel.
    pub fn broadcast(per_branch: &[f64], c_out: usize) -> Result<Self> {
        let rows: Vec<Vec<f64>> = per_branch.iter().map(|v| vec![*v; c_out]).collect();
        BranchWeights::new(Matrix::from_rows(&rows)?)
    }

    pub fn branch_count(&self) -> usize {
        self.values.rows()
    }

    pub fn c_out(&self) -> usize {
        self.values.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.values
    }

    /// Per-channel weights of branch `b`.
    pub fn branch(&self, b: usize) -> &[f64] {
        self.values.row(b)
    }

    /// Mean over output channels of every branch row.
    pub fn branch_means(&self) -> Vec<f64> {
        (0..self.branch_count()).map(|b| self.branch(b).iter().sum::<f64>() / self.c_out() as f64).collect()
    }
}

/// Classic layers recovered by fixing the branch weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecialCase {
    Vgg,
    Resnet,
    Repvgg,
    Lightweight,
}

impl SpecialCase {
    pub const ALL: [SpecialCase; 4] =
        [SpecialCase::Vgg, SpecialCase::Resnet, SpecialCase::Repvgg, SpecialCase::Lightweight];

    /// `(w_3x3, w_1x3, w_3x1, w_1x1, w_shortcut)`.
    pub fn weights(self) -> [f64; 5] {
        match self {
            SpecialCase::Vgg => [1.0, 0.0, 0.0, 0.0, 0.0],
            SpecialCase::Resnet => [0.5, 0.0, 0.0, 0.0, 0.5],
            SpecialCase::Repvgg => [1.0 / 3.0, 0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0],
            SpecialCase::Lightweight => [0.0, 0.0, 0.0, 0.0, 1.0],
        }
    }

    pub fn needs_shortcut(self) -> bool {
        self.weights()[4] != 0.0
    }

    pub fn name(self) -> &'static str {
        match self {
            SpecialCase::Vgg => "vgg",
            SpecialCase::Resnet => "resnet",
            SpecialCase::Repvgg => "repvgg",
            SpecialCase::Lightweight => "lightweight",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrpnLayer {
    c_in: usize,
    c_out: usize,
    f1: Kernel4,
    f2: Kernel4,
    kernels: BranchKernels,
    fixed_weights: Option<BranchWeights>,
}

impl DrpnLayer {
    /// `f1` is `(B, c_in, 1, 1)`, `f2` is `(c_out, c_in, 1, 1)`, where `B` is 5
    /// when `c_in == c_out` (shortcut present) and 4 otherwise.
    pub fn new(f1: Kernel4, f2: Kernel4, kernels: BranchKernels) -> Result<Self> {
        let (c_out, c_in) = kernels.channels()?;
        let b = if c_in == c_out { 5 } else { 4 };
        if f1.shape() != (b, c_in, 1, 1) {
            return Err(shape_err!("f1 {:?}, expected ({b}, {c_in}, 1, 1)", f1.shape()));
        }
        if f2.shape() != (c_out, c_in, 1, 1) {
            return Err(shape_err!("f2 {:?}, expected ({c_out}, {c_in}, 1, 1)", f2.shape()));
        }
        Ok(DrpnLayer { c_in, c_out, f1, f2, kernels, fixed_weights: None })
    }

    /// Gaussian init: He-scaled branches, `std = 0.01` for `f1` and `f2`.
    pub fn random<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Result<Self> {
        Self::random_with_attention_std(c_in, c_out, 0.01, rng)
    }

    /// [`DrpnLayer::random`] drawn from a ChaCha8 stream seeded with `seed`.
    pub fn seeded(c_in: usize, c_out: usize, seed: u64) -> Result<Self> {
        Self::random(c_in, c_out, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn random_with_attention_std<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        attn_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if c_in == 0 || c_out == 0 {
            return Err(shape_err!("channel counts must be >= 1"));
        }
        let kernels = BranchKernels::random(c_in, c_out, rng)?;
        let b = if c_in == c_out { 5 } else { 4 };
        let f1 = gaussian_kernel(b, c_in, 1, 1, attn_std, rng)?;
        let f2 = gaussian_kernel(c_out, c_in, 1, 1, attn_std, rng)?;
        DrpnLayer::new(f1, f2, kernels)
    }

    pub fn with_fixed_weights(mut self, w: BranchWeights) -> Result<Self> {
        if w.branch_count() != self.branch_count() || w.c_out() != self.c_out {
            return Err(shape_err!(
                "fixed weights {}x{} for a layer with {} branches and {} outputs",
                w.branch_count(),
                w.c_out(),
                self.branch_count(),
                self.c_out
            ));
        }
        self.fixed_weights = Some(w);
        Ok(self)
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn has_shortcut(&self) -> bool {
        self.c_in == self.c_out
    }

    pub fn branch_count(&self) -> usize {
        if self.has_shortcut() {
            5
        } else {
            4
        }
    }

    pub fn f1(&self) -> &Kernel4 {
        &self.f1
    }

    pub fn f2(&self) -> &Kernel4 {
        &self.f2
    }

    pub fn kernels(&self) -> &BranchKernels {
        &self.kernels
    }

    pub fn fixed_weights(&self) -> Option<&BranchWeights> {
        self.fixed_weights.as_ref()
    }

    /// Zeroes `f1` and `f2`, making every generated weight `1 / B`.
    pub fn zero_attention(&mut self) {
        self.f1.data_mut().iter_mut().for_each(|v| *v = 0.0);
        self.f2.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        if x.c() != self.c_in {
            return Err(shape_err!("layer expects {} input channels, got {}", self.c_in, x.c()));
        }
        Ok(())
    }

    /// `softmax(Q^T K / N)` with `Q = [f1(x)]`, `K = [f2(x)]`, `N = h * w`,
    /// normalised over branches. Returns the fixed weights when set.
    pub fn generate_weights(&self, x: &Tensor4) -> Result<BranchWeights> {
        self.check_input(x)?;
        if x.n() != 1 {
            return Err(shape_err!("generate_weights works on one sample, got batch {}", x.n()));
        }
        if let Some(w) = &self.fixed_weights {
            return Ok(w.clone());
        }
        let q = flatten_spatial(&conv2d(x, &self.f1, 0, 0)?)?;
        let k = flatten_spatial(&conv2d(x, &self.f2, 0, 0)?)?;
        let logits = matmul(&transpose(&q), &k)?;
        let inv_n = 1.0 / (x.h() * x.w()) as f64;
        let scaled =
            Matrix::new(logits.rows(), logits.cols(), logits.into_data().into_iter().map(|v| v * inv_n).collect())?;
        BranchWeights::new(softmax_over_branches(&scaled))
    }

    /// Branch outputs in row order; the shortcut is a 1x1 identity convolution.
    fn branch_outputs(&self, x: &Tensor4) -> Result<Vec<Tensor4>> {
        let mut outs = Vec::with_capacity(self.branch_count());
        for (k, (kh, kw)) in self.kernels.as_array().into_iter().zip(BRANCH_GEOMETRY) {
            let (ph, pw) = same_padding(kh, kw);
            outs.push(conv2d(x, k, ph, pw)?);
        }
        if self.has_shortcut() {
            outs.push(conv2d(x, &identity_kernel_1x1(self.c_in), 0, 0)?);
        }
        Ok(outs)
    }

    fn mix(outs: &[Tensor4], w: &BranchWeights) -> Result<Tensor4> {
        let mut acc = channel_scale(&outs[0], w.branch(0))?;
        for (b, out) in outs.iter().enumerate().skip(1) {
            acc = crate::tensor::add(&acc, &channel_scale(out, w.branch(b))?)?;
        }
        Ok(acc)
    }

    fn per_sample(&self, x: &Tensor4, f: impl Fn(&Tensor4) -> Result<Tensor4>) -> Result<Tensor4> {
        self.check_input(x)?;
        let outs = (0..x.n()).map(|i| x.sample(i).and_then(|s| f(&s))).collect::<Result<Vec<_>>>()?;
        Tensor4::stack(&outs)
    }

    /// Multi-branch forward: convolve with every branch, then mix the outputs
    /// with the generated weights. `2 + B` convolutions per sample.
    pub fn forward_train(&self, x: &Tensor4) -> Result<Tensor4> {
        self.per_sample(x, |s| {
            let w = self.generate_weights(s)?;
            Self::mix(&self.branch_outputs(s)?, &w)
        })
    }

    /// Convolve-first ordering: all branch convolutions run before the weights
    /// are generated. Same result and count as [`DrpnLayer::forward_train`];
    /// this is the unfused baseline that cannot be folded.
    pub fn forward_convolve_first(&self, x: &Tensor4) -> Result<Tensor4> {
        self.per_sample(x, |s| {
            let outs = self.branch_outputs(s)?;
            let w = self.generate_weights(s)?;
            Self::mix(&outs, &w)
        })
    }

    /// `sum_b w_b x_1 pad3x3(k_b)`, with the 3x3 identity as the shortcut kernel.
    pub fn fold_kernels(&self, w: &BranchWeights) -> Result<Kernel4> {
        if w.branch_count() != self.branch_count() || w.c_out() != self.c_out {
            return Err(shape_err!(
                "weights {}x{} for a layer with {} branches and {} outputs",
                w.branch_count(),
                w.c_out(),
                self.branch_count(),
                self.c_out
            ));
        }
        let mut acc = kernel_channel_scale(&pad_kernel_to_3x3(&self.kernels.k3x3)?, w.branch(0))?;
        for (b, k) in self.kernels.as_array().into_iter().enumerate().skip(1) {
            acc = acc.add(&kernel_channel_scale(&pad_kernel_to_3x3(k)?, w.branch(b))?)?;
        }
        if self.has_shortcut() {
            acc = acc.add(&kernel_channel_scale(&identity_kernel(self.c_in), w.branch(4))?)?;
        }
        Ok(acc)
    }

    /// Folded forward: generate weights, fold, one 3x3 convolution.
    /// Three convolutions per sample.
    pub fn forward_inference(&self, x: &Tensor4) -> Result<Tensor4> {
        self.per_sample(x, |s| {
            let w = self.generate_weights(s)?;
            conv2d(s, &self.fold_kernels(&w)?, 1, 1)
        })
    }

    /// `(name, array)` pairs for serialization, names prefixed with `prefix.`.
    pub fn named_arrays(&self, prefix: &str) -> Vec<(String, Array)> {
        let k = &self.kernels;
        let mut out = vec![
            (format!("{prefix}.f1"), self.f1.clone().into()),
            (format!("{prefix}.f2"), self.f2.clone().into()),
            (format!("{prefix}.k3x3"), k.k3x3.clone().into()),
            (format!("{prefix}.k1x3"), k.k1x3.clone().into()),
            (format!("{prefix}.k3x1"), k.k3x1.clone().into()),
            (format!("{prefix}.k1x1"), k.k1x1.clone().into()),
        ];
        if let Some(w) = &self.fixed_weights {
            out.push((format!("{prefix}.fixed_weights"), w.matrix().clone().into()));
        }
        out
    }

    /// Rebuilds a layer from [`DrpnLayer::named_arrays`] output.
    pub fn from_named_arrays(prefix: &str, lookup: impl Fn(&str) -> Option<Array>) -> Result<Self> {
        let get = |name: &str| -> Result<Kernel4> {
            let key = format!("{prefix}.{name}");
            lookup(&key).ok_or_else(|| Error::Format(format!("missing tensor {key:?}")))?.try_into()
        };
        let kernels = BranchKernels { k3x3: get("k3x3")?, k1x3: get("k1x3")?, k3x1: get("k3x1")?, k1x1: get("k1x1")? };
        let layer = DrpnLayer::new(get("f1")?, get("f2")?, kernels)?;
        match lookup(&format!("{prefix}.fixed_weights")) {
            Some(a) => layer.with_fixed_weights(BranchWeights::new(a.try_into()?)?),
            None => Ok(layer),
        }
    }
}

/// Layer with fixed branch weights reproducing a classic convolution block.
/// Every case except VGG needs `c_in == c_out` for the shortcut.
pub fn make_special_case(case: SpecialCase, kernels: BranchKernels) -> Result<DrpnLayer> {
    let (c_out, c_in) = kernels.channels()?;
    if case.needs_shortcut() && c_in != c_out {
        return Err(Error::InvalidArgument(format!(
            "{} needs a shortcut branch, but c_in = {c_in} differs from c_out = {c_out}",
            case.name()
        )));
    }
    let b = if c_in == c_out { 5 } else { 4 };
    let f1 = Kernel4::zeros(b, c_in, 1, 1)?;
    let f2 = Kernel4::zeros(c_out, c_in, 1, 1)?;
    let weights = BranchWeights::broadcast(&case.weights()[..b], c_out)?;
    DrpnLayer::new(f1, f2, kernels)?.with_fixed_weights(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{add, scale};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_input(n: usize, c: usize, h: usize, w: usize, r: &mut ChaCha8Rng) -> Tensor4 {
        Tensor4::from_fn(n, c, h, w, |_, _, _, _| r.random_range(-1.0..1.0))
    }

    // Attention computed with explicit loops, no matrices.
    fn attention_oracle(layer: &DrpnLayer, x: &Tensor4) -> Vec<Vec<f64>> {
        let (_, c_in, h, w) = x.shape();
        let b = layer.branch_count();
        let n = (h * w) as f64;
        let mut logits = vec![vec![0.0; layer.c_out()]; b];
        for i in 0..h {
            for j in 0..w {
                let q: Vec<f64> =
                    (0..b).map(|r| (0..c_in).map(|c| layer.f1().get(r, c, 0, 0) * x.get(0, c, i, j)).sum()).collect();
                let k: Vec<f64> = (0..layer.c_out())
                    .map(|o| (0..c_in).map(|c| layer.f2().get(o, c, 0, 0) * x.get(0, c, i, j)).sum())
                    .collect();
                for r in 0..b {
                    for o in 0..layer.c_out() {
                        logits[r][o] += q[r] * k[o] / n;
                    }
                }
            }
        }
        let mut out = logits.clone();
        for o in 0..layer.c_out() {
            let z: f64 = (0..b).map(|r| logits[r][o].exp()).sum();
            for r in 0..b {
                out[r][o] = logits[r][o].exp() / z;
            }
        }
        out
    }

    #[test]
    fn zero_attention_gives_uniform_weights() {
        let mut r = rng(1);
        for (ci, co) in [(3, 3), (2, 4)] {
            let mut layer = DrpnLayer::random(ci, co, &mut r).unwrap();
            layer.zero_attention();
            let x = random_input(1, ci, 5, 5, &mut r);
            let w = layer.generate_weights(&x).unwrap();
            let b = layer.branch_count() as f64;
            assert!(w.matrix().data().iter().all(|v| (*v - 1.0 / b).abs() < 1e-15));
        }
    }

    #[test]
    fn generate_weights_matches_loop_oracle() {
        let mut r = rng(2);
        let layer = DrpnLayer::random_with_attention_std(2, 3, 1.0, &mut r).unwrap();
        let x = random_input(1, 2, 6, 6, &mut r);
        let w = layer.generate_weights(&x).unwrap();
        let want = attention_oracle(&layer, &x);
        for (b, row) in want.iter().enumerate() {
            for (o, v) in row.iter().enumerate() {
                assert!((w.matrix().get(b, o) - v).abs() <= 1e-10);
            }
        }
        for s in w.matrix().column_sums() {
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn generate_weights_rejects_batches_and_wrong_channels() {
        let mut r = rng(3);
        let layer = DrpnLayer::random(2, 2, &mut r).unwrap();
        assert!(layer.generate_weights(&Tensor4::zeros(2, 2, 4, 4)).is_err());
        assert!(layer.generate_weights(&Tensor4::zeros(1, 3, 4, 4)).is_err());
        assert!(layer.forward_train(&Tensor4::zeros(1, 3, 4, 4)).is_err());
    }

    #[test]
    fn fixed_weights_bypass_generation() {
        let mut r = rng(4);
        let k = BranchKernels::random(3, 3, &mut r).unwrap();
        let layer = make_special_case(SpecialCase::Vgg, k).unwrap();
        let x = random_input(1, 3, 5, 5, &mut r);
        let w = layer.generate_weights(&x).unwrap();
        assert_eq!(w.branch(0), &[1.0; 3]);
        for b in 1..5 {
            assert_eq!(w.branch(b), &[0.0; 3]);
        }
    }

    #[test]
    fn special_cases_closed_forms() {
        let mut r = rng(5);
        let k = BranchKernels::random(3, 3, &mut r).unwrap();
        let x = random_input(2, 3, 6, 5, &mut r);
        let c3 = conv2d(&x, &k.k3x3, 1, 1).unwrap();
        let c1 = conv2d(&x, &k.k1x1, 0, 0).unwrap();

        let vgg = make_special_case(SpecialCase::Vgg, k.clone()).unwrap();
        assert_eq!(vgg.forward_train(&x).unwrap(), c3);
        assert_eq!(vgg.fold_kernels(vgg.fixed_weights().unwrap()).unwrap(), k.k3x3);

        let light = make_special_case(SpecialCase::Lightweight, k.clone()).unwrap();
        assert_eq!(light.forward_train(&x).unwrap(), x);
        assert_eq!(light.fold_kernels(light.fixed_weights().unwrap()).unwrap(), identity_kernel(3));

        let res = make_special_case(SpecialCase::Resnet, k.clone()).unwrap();
        let want = add(&scale(&c3, 0.5), &scale(&x, 0.5)).unwrap();
        assert!(res.forward_train(&x).unwrap().max_abs_diff(&want).unwrap() <= 1e-12);
        let fold = res.fold_kernels(res.fixed_weights().unwrap()).unwrap();
        let mut want_k = k.k3x3.clone();
        want_k.data_mut().iter_mut().for_each(|v| *v *= 0.5);
        for o in 0..3 {
            want_k.set(o, o, 1, 1, want_k.get(o, o, 1, 1) + 0.5);
        }
        assert!(fold.max_abs_diff(&want_k).unwrap() <= 1e-15);

        let rep = make_special_case(SpecialCase::Repvgg, k.clone()).unwrap();
        let want = scale(&add(&add(&c3, &c1).unwrap(), &x).unwrap(), 1.0 / 3.0);
        assert!(rep.forward_train(&x).unwrap().max_abs_diff(&want).unwrap() <= 1e-12);
    }

    #[test]
    fn special_case_shortcut_requirement() {
        let mut r = rng(6);
        let k = BranchKernels::random(2, 4, &mut r).unwrap();
        let vgg = make_special_case(SpecialCase::Vgg, k.clone()).unwrap();
        assert_eq!(vgg.branch_count(), 4);
        for case in [SpecialCase::Resnet, SpecialCase::Repvgg, SpecialCase::Lightweight] {
            assert!(make_special_case(case, k.clone()).is_err());
        }
    }

    #[test]
    fn fold_matches_multibranch() {
        let mut r = rng(7);
        for (ci, co) in [(3, 3), (2, 5), (1, 1)] {
            let layer = DrpnLayer::random_with_attention_std(ci, co, 0.5, &mut r).unwrap();
            let x = random_input(3, ci, 7, 6, &mut r);
            let a = layer.forward_train(&x).unwrap();
            let b = layer.forward_inference(&x).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() <= 1e-10 * (1.0 + a.max_abs()));
            assert_eq!(layer.forward_convolve_first(&x).unwrap(), a);
        }
    }

    #[test]
    fn zero_input_zero_output() {
        let mut r = rng(8);
        let mut layer = DrpnLayer::random(3, 3, &mut r).unwrap();
        layer.zero_attention();
        let y = layer.forward_inference(&Tensor4::zeros(1, 3, 5, 5)).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fold_rejects_wrong_branch_count() {
        let mut r = rng(9);
        let layer = DrpnLayer::random(2, 3, &mut r).unwrap();
        let w = BranchWeights::broadcast(&[0.2; 5], 3).unwrap();
        assert!(layer.fold_kernels(&w).is_err());
    }

    #[test]
    fn named_arrays_roundtrip() {
        let mut r = rng(10);
        let layer = make_special_case(SpecialCase::Repvgg, BranchKernels::random(2, 2, &mut r).unwrap()).unwrap();
        let named = layer.named_arrays("l");
        let back =
            DrpnLayer::from_named_arrays("l", |n| named.iter().find(|(k, _)| k == n).map(|(_, a)| a.clone())).unwrap();
        assert_eq!(back, layer);
    }
}
