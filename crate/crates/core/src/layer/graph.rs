//! The layer's forward passes recorded on a [`Tape`], so gradients flow into
//! the branch kernels and through the softmax into `f1` and `f2`.

use super::{same_padding, DrpnLayer, BRANCH_GEOMETRY};
use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{identity_kernel, identity_kernel_1x1, Array};

/// Tape handles for one layer's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerVars {
    pub c_in: usize,
    pub c_out: usize,
    pub f1: Var,
    pub f2: Var,
    /// 3x3, 1x3, 3x1, 1x1.
    pub kernels: [Var; 4],
    /// Constant weight matrix replacing the generator, when fixed.
    pub fixed: Option<Var>,
}

impl DrpnLayer {
    /// Records every parameter of the layer as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> LayerVars {
        let k = self.kernels();
        LayerVars {
            c_in: self.c_in(),
            c_out: self.c_out(),
            f1: tape.leaf(self.f1().clone().into()),
            f2: tape.leaf(self.f2().clone().into()),
            kernels: [
                tape.leaf(k.k3x3.clone().into()),
                tape.leaf(k.k1x3.clone().into()),
                tape.leaf(k.k3x1.clone().into()),
                tape.leaf(k.k1x1.clone().into()),
            ],
            fixed: self.fixed_weights().map(|w| tape.leaf(w.matrix().clone().into())),
        }
    }
}

impl LayerVars {
    /// Handles in the order `f1, f2, k3x3, k1x3, k3x1, k1x1`.
    pub fn from_slice(c_in: usize, c_out: usize, vars: &[Var]) -> Result<Self> {
        match vars {
            [f1, f2, a, b, c, d] => {
                Ok(LayerVars { c_in, c_out, f1: *f1, f2: *f2, kernels: [*a, *b, *c, *d], fixed: None })
            }
            _ => Err(shape_err!("expected 6 layer parameters, got {}", vars.len())),
        }
    }

    pub fn params(&self) -> [Var; 6] {
        let [a, b, c, d] = self.kernels;
        [self.f1, self.f2, a, b, c, d]
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

    /// `B x c_out` weights for a single-sample node.
    pub fn generate_weights(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if let Some(w) = self.fixed {
            return Ok(w);
        }
        let [_, _, h, w] = tape.value(x).dims4()?;
        let q = tape.conv2d(x, self.f1, 0, 0)?;
        let q = tape.flatten_spatial(q)?;
        let k = tape.conv2d(x, self.f2, 0, 0)?;
        let k = tape.flatten_spatial(k)?;
        let qt = tape.transpose(q)?;
        let logits = tape.matmul(qt, k)?;
        let logits = tape.scale(logits, 1.0 / (h * w) as f64)?;
        tape.softmax_over_branches(logits)
    }

    fn per_sample(&self, tape: &mut Tape, x: Var, f: impl Fn(&Self, &mut Tape, Var) -> Result<Var>) -> Result<Var> {
        let [n, c, _, _] = tape.value(x).dims4()?;
        if c != self.c_in {
            return Err(shape_err!("layer expects {} input channels, got {c}", self.c_in));
        }
        if n == 1 {
            return f(self, tape, x);
        }
        let mut outs = Vec::with_capacity(n);
        for i in 0..n {
            let s = tape.slice_batch(x, i)?;
            outs.push(f(self, tape, s)?);
        }
        tape.stack_batch(&outs)
    }

    /// Multi-branch forward on the tape.
    pub fn forward_train(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.per_sample(tape, x, |lv, tape, s| {
            let w = lv.generate_weights(tape, s)?;
            let mut terms = Vec::with_capacity(5);
            for (b, (k, (kh, kw))) in lv.kernels.iter().zip(BRANCH_GEOMETRY).enumerate() {
                let (ph, pw) = same_padding(kh, kw);
                let y = tape.conv2d(s, *k, ph, pw)?;
                let wb = tape.row(w, b)?;
                terms.push(tape.channel_scale(y, wb)?);
            }
            if lv.has_shortcut() {
                let id = tape.leaf(identity_kernel_1x1(lv.c_in).into());
                let y = tape.conv2d(s, id, 0, 0)?;
                let wb = tape.row(w, 4)?;
                terms.push(tape.channel_scale(y, wb)?);
            }
            tape.sum_all(&terms)
        })
    }

    /// Folded forward on the tape.
    pub fn forward_inference(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.per_sample(tape, x, |lv, tape, s| {
            let w = lv.generate_weights(tape, s)?;
            let k = lv.fold_kernels(tape, w)?;
            tape.conv2d(s, k, 1, 1)
        })
    }

    pub fn fold_kernels(&self, tape: &mut Tape, w: Var) -> Result<Var> {
        let mut terms = Vec::with_capacity(5);
        for (b, k) in self.kernels.iter().enumerate() {
            let padded = tape.pad_kernel(*k)?;
            let wb = tape.row(w, b)?;
            terms.push(tape.kernel_channel_scale(padded, wb)?);
        }
        if self.has_shortcut() {
            let id = tape.leaf(Array::from(identity_kernel(self.c_in)));
            let wb = tape.row(w, 4)?;
            terms.push(tape.kernel_channel_scale(id, wb)?);
        }
        tape.sum_all(&terms)
    }
}
