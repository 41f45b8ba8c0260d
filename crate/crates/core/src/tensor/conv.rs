//! Direct stride-1 convolution (cross-correlation, zero padding) and its
//! two adjoints. All three share one loop nest: for every kernel tap the
//! valid output columns are computed once, so the innermost loop is a
//! bounds-check-free axpy over contiguous rows.

use super::{Kernel4, Tensor4};
use crate::error::{shape_err, Result};
use crate::instrument;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(x: [usize; 4], k: [usize; 4], ph: usize, pw: usize) -> Result<Self> {
        let [n, c, h, w] = x;
        let [co, ci, kh, kw] = k;
        if c != ci {
            return Err(shape_err!("conv2d: input has {c} channels, kernel expects {ci}"));
        }
        let span_h = h + 2 * ph;
        let span_w = w + 2 * pw;
        if span_h < kh || span_w < kw {
            return Err(shape_err!("conv2d: output extent < 1 for input {h}x{w}, kernel {kh}x{kw}, pad ({ph}, {pw})"));
        }
        Ok(ConvGeom { n, ci, h, w, co, kh, kw, ph, pw, oh: span_h - kh + 1, ow: span_w - kw + 1 })
    }

    pub fn macs(&self) -> u64 {
        (self.n * self.co * self.ci * self.kh * self.kw * self.oh * self.ow) as u64
    }

    /// Output rows whose input row `oy + r - ph` lies inside the image.
    #[inline]
    fn rows(&self, r: usize) -> std::ops::Range<usize> {
        let lo = self.ph.saturating_sub(r);
        let hi = (self.h + self.ph).saturating_sub(r).min(self.oh);
        lo..hi.max(lo)
    }

    #[inline]
    fn cols(&self, s: usize) -> std::ops::Range<usize> {
        let lo = self.pw.saturating_sub(s);
        let hi = (self.w + self.pw).saturating_sub(s).min(self.ow);
        lo..hi.max(lo)
    }
}

pub(crate) fn conv2d_raw(x: &[f64], k: &[f64], g: &ConvGeom) -> Vec<f64> {
    instrument::record_conv(g.macs());
    let mut out = vec![0.0; g.n * g.co * g.oh * g.ow];
    let (xplane, oplane) = (g.h * g.w, g.oh * g.ow);
    for b in 0..g.n {
        for o in 0..g.co {
            let dst = &mut out[(b * g.co + o) * oplane..][..oplane];
            for c in 0..g.ci {
                let src = &x[(b * g.ci + c) * xplane..][..xplane];
                for r in 0..g.kh {
                    for s in 0..g.kw {
                        let kv = k[((o * g.ci + c) * g.kh + r) * g.kw + s];
                        let cols = g.cols(s);
                        let ix0 = cols.start + s - g.pw;
                        for oy in g.rows(r) {
                            let iy = oy + r - g.ph;
                            let d = &mut dst[oy * g.ow + cols.start..oy * g.ow + cols.end];
                            let sr = &src[iy * g.w + ix0..iy * g.w + ix0 + d.len()];
                            for (dv, sv) in d.iter_mut().zip(sr) {
                                *dv += kv * sv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint with respect to the input: scatters `grad_out` back through the kernel.
pub(crate) fn conv2d_grad_input(grad_out: &[f64], k: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut gx = vec![0.0; g.n * g.ci * g.h * g.w];
    let (xplane, oplane) = (g.h * g.w, g.oh * g.ow);
    for b in 0..g.n {
        for o in 0..g.co {
            let go = &grad_out[(b * g.co + o) * oplane..][..oplane];
            for c in 0..g.ci {
                let dst = &mut gx[(b * g.ci + c) * xplane..][..xplane];
                for r in 0..g.kh {
                    for s in 0..g.kw {
                        let kv = k[((o * g.ci + c) * g.kh + r) * g.kw + s];
                        let cols = g.cols(s);
                        let ix0 = cols.start + s - g.pw;
                        for oy in g.rows(r) {
                            let iy = oy + r - g.ph;
                            let sr = &go[oy * g.ow + cols.start..oy * g.ow + cols.end];
                            let d = &mut dst[iy * g.w + ix0..iy * g.w + ix0 + sr.len()];
                            for (dv, sv) in d.iter_mut().zip(sr) {
                                *dv += kv * sv;
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Adjoint with respect to the kernel: correlates the input with `grad_out`.
pub(crate) fn conv2d_grad_kernel(x: &[f64], grad_out: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut gk = vec![0.0; g.co * g.ci * g.kh * g.kw];
    let (xplane, oplane) = (g.h * g.w, g.oh * g.ow);
    for b in 0..g.n {
        for o in 0..g.co {
            let go = &grad_out[(b * g.co + o) * oplane..][..oplane];
            for c in 0..g.ci {
                let src = &x[(b * g.ci + c) * xplane..][..xplane];
                for r in 0..g.kh {
                    for s in 0..g.kw {
                        let cols = g.cols(s);
                        let ix0 = cols.start + s - g.pw;
                        let mut acc = 0.0;
                        for oy in g.rows(r) {
                            let iy = oy + r - g.ph;
                            let gr = &go[oy * g.ow + cols.start..oy * g.ow + cols.end];
                            let sr = &src[iy * g.w + ix0..iy * g.w + ix0 + gr.len()];
                            acc += gr.iter().zip(sr).map(|(a, b)| a * b).sum::<f64>();
                        }
                        gk[((o * g.ci + c) * g.kh + r) * g.kw + s] += acc;
                    }
                }
            }
        }
    }
    gk
}

/// Stride-1 2-D convolution with symmetric zero padding `(pad_h, pad_w)`.
pub fn conv2d(x: &Tensor4, k: &Kernel4, pad_h: usize, pad_w: usize) -> Result<Tensor4> {
    let (n, c, h, w) = x.shape();
    let (co, ci, kh, kw) = k.shape();
    let g = ConvGeom::new([n, c, h, w], [co, ci, kh, kw], pad_h, pad_w)?;
    let out = conv2d_raw(x.data(), k.data(), &g);
    Tensor4::new(n, co, g.oh, g.ow, out)
}
