//! Convolution and multiply-accumulate accounting for the three ways of
//! running a layer, plus wall-clock timing.
//!
//! Counts are closed-form and per the whole batch. The instrumented kernels in
//! [`crate::tensor`] report the same quantities, so every formula here can be
//! checked against [`crate::instrument::measure`].

use std::fmt;
use std::io::{self, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::instrument::OpCounts;
use crate::layer::DrpnLayer;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Every branch convolved and mixed with the generated weights.
    TrainMultibranch,
    /// Weights generated, kernels folded, one 3x3 convolution.
    FoldedInference,
    /// All branches convolved before the weights exist; cannot be folded.
    UnfusedBaseline,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::TrainMultibranch, Mode::FoldedInference, Mode::UnfusedBaseline];

    pub fn name(self) -> &'static str {
        match self {
            Mode::TrainMultibranch => "train_multibranch",
            Mode::FoldedInference => "folded_inference",
            Mode::UnfusedBaseline => "unfused_baseline",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// MAC count split by where the work goes.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MacBreakdown {
    /// Attention, branch and folded convolutions.
    pub conv: u64,
    /// `Q^T K`: `N * B * c_out` per sample.
    pub attention_matmul: u64,
    /// Scaling the padded branch kernels: `B * c_out * c_in * 9` per sample.
    pub fold: u64,
    /// Scaling branch outputs: `B * c_out * h * w` per sample.
    pub weighting: u64,
}

impl MacBreakdown {
    pub fn total(&self) -> u64 {
        self.conv + self.attention_matmul + self.fold + self.weighting
    }

    /// Same quantities as they appear in the instrument counters.
    pub fn matches(&self, counts: &OpCounts) -> bool {
        self.conv == counts.conv_macs
            && self.attention_matmul == counts.matmul_macs
            && self.fold == counts.kernel_scale_macs
            && self.weighting == counts.channel_scale_macs
    }
}

fn attention_convs(layer: &DrpnLayer) -> u64 {
    if layer.fixed_weights().is_some() {
        0
    } else {
        2
    }
}

/// Convolutions per sample: 3 folded, `2 + B` otherwise. Layers with fixed
/// weights skip the two attention convolutions.
pub fn count_convolutions(layer: &DrpnLayer, mode: Mode) -> u64 {
    let main = match mode {
        Mode::FoldedInference => 1,
        Mode::TrainMultibranch | Mode::UnfusedBaseline => layer.branch_count() as u64,
    };
    attention_convs(layer) + main
}

/// One `(co, ci, kh, kw)` convolution with same padding over an `h x w` map.
pub fn conv_macs(h: usize, w: usize, co: usize, ci: usize, kh: usize, kw: usize) -> u64 {
    (h * w * co * ci * kh * kw) as u64
}

pub fn check_shape(layer: &DrpnLayer, (n, c, h, w): (usize, usize, usize, usize)) -> Result<()> {
    if n == 0 || c == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("input shape {:?} has a zero extent", (n, c, h, w))));
    }
    if c != layer.c_in() {
        return Err(Error::Shape(format!("layer expects {} input channels, got {c}", layer.c_in())));
    }
    Ok(())
}

pub fn count_macs(layer: &DrpnLayer, shape: (usize, usize, usize, usize), mode: Mode) -> Result<MacBreakdown> {
    check_shape(layer, shape)?;
    let (n, ci, h, w) = shape;
    let (co, b) = (layer.c_out(), layer.branch_count());
    let mut per = MacBreakdown::default();
    if layer.fixed_weights().is_none() {
        per.conv += conv_macs(h, w, b, ci, 1, 1) + conv_macs(h, w, co, ci, 1, 1);
        per.attention_matmul = (h * w * b * co) as u64;
    }
    match mode {
        Mode::FoldedInference => {
            per.fold = (b * co * ci * 9) as u64;
            per.conv += conv_macs(h, w, co, ci, 3, 3);
        }
        Mode::TrainMultibranch | Mode::UnfusedBaseline => {
            per.conv +=
                [(3, 3), (1, 3), (3, 1), (1, 1)].iter().map(|&(kh, kw)| conv_macs(h, w, co, ci, kh, kw)).sum::<u64>();
            if layer.has_shortcut() {
                per.conv += conv_macs(h, w, co, ci, 1, 1);
            }
            per.weighting = (b * co * h * w) as u64;
        }
    }
    let n = n as u64;
    Ok(MacBreakdown {
        conv: n * per.conv,
        attention_matmul: n * per.attention_matmul,
        fold: n * per.fold,
        weighting: n * per.weighting,
    })
}

pub fn run_mode(layer: &DrpnLayer, mode: Mode, x: &Tensor4) -> Result<Tensor4> {
    match mode {
        Mode::TrainMultibranch => layer.forward_train(x),
        Mode::FoldedInference => layer.forward_inference(x),
        Mode::UnfusedBaseline => layer.forward_convolve_first(x),
    }
}

/// Uniform `[-1, 1)` input of the given shape.
pub fn random_input(shape: (usize, usize, usize, usize), seed: u64) -> Tensor4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, h, w) = shape;
    Tensor4::from_fn(n, c, h, w, |_, _, _, _| rng.random_range(-1.0..1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub mode: Mode,
    /// Convolutions over the whole batch.
    pub conv_calls: u64,
    pub macs: MacBreakdown,
    /// Median over the timed repetitions.
    pub wall_ns: u128,
    pub input_shape: (usize, usize, usize, usize),
}

pub const WARMUP_RUNS: usize = 2;
pub const MIN_REPS: usize = 5;

fn median(mut v: Vec<u128>) -> u128 {
    v.sort_unstable();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2
    }
}

/// Times every mode on the same seeded input: two warm-up runs, then the
/// median of `reps` timed runs. Runs on the calling thread.
pub fn time_modes(
    layer: &DrpnLayer,
    shape: (usize, usize, usize, usize),
    reps: usize,
    seed: u64,
) -> Result<Vec<CostReport>> {
    if reps < MIN_REPS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_REPS} repetitions, got {reps}")));
    }
    check_shape(layer, shape)?;
    let x = random_input(shape, seed);
    Mode::ALL
        .iter()
        .map(|&mode| {
            for _ in 0..WARMUP_RUNS {
                run_mode(layer, mode, &x)?;
            }
            let mut times = Vec::with_capacity(reps);
            for _ in 0..reps {
                let start = Instant::now();
                std::hint::black_box(run_mode(layer, mode, &x)?);
                times.push(start.elapsed().as_nanos());
            }
            Ok(CostReport {
                mode,
                conv_calls: shape.0 as u64 * count_convolutions(layer, mode),
                macs: count_macs(layer, shape, mode)?,
                wall_ns: median(times),
                input_shape: shape,
            })
        })
        .collect()
}

pub const COST_CSV_HEADER: &str =
    "mode,n,c,h,w,conv_calls,conv_macs,attention_macs,fold_macs,weighting_macs,total_macs,wall_ns";

pub fn write_cost_csv(reports: &[CostReport], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{COST_CSV_HEADER}")?;
    for r in reports {
        let (n, c, h, w) = r.input_shape;
        let m = &r.macs;
        writeln!(
            out,
            "{},{n},{c},{h},{w},{},{},{},{},{},{},{}",
            r.mode,
            r.conv_calls,
            m.conv,
            m.attention_matmul,
            m.fold,
            m.weighting,
            m.total(),
            r.wall_ns
        )?;
    }
    Ok(())
}

/// Fixed-width table for terminals.
pub fn format_cost_table(reports: &[CostReport]) -> String {
    let mut s = format!(
        "{:<18} {:>6} {:>14} {:>12} {:>10} {:>12} {:>14} {:>12}\n",
        "mode", "convs", "conv MACs", "attn MACs", "fold MACs", "weight MACs", "total MACs", "median ms"
    );
    for r in reports {
        let m = &r.macs;
        s.push_str(&format!(
            "{:<18} {:>6} {:>14} {:>12} {:>10} {:>12} {:>14} {:>12.3}\n",
            r.mode.name(),
            r.conv_calls,
            m.conv,
            m.attention_matmul,
            m.fold,
            m.weighting,
            m.total(),
            r.wall_ns as f64 / 1e6
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::measure;
    use crate::tensor::conv2d;
    use crate::tensor::Kernel4;

    fn layer(ci: usize, co: usize, seed: u64) -> DrpnLayer {
        DrpnLayer::random(ci, co, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn one_by_one_single_channel() {
        assert_eq!(conv_macs(4, 4, 1, 1, 1, 1), 16);
        let x = Tensor4::zeros(1, 1, 4, 4);
        let (_, c) = measure(|| conv2d(&x, &Kernel4::zeros(1, 1, 1, 1).unwrap(), 0, 0).unwrap());
        assert_eq!((c.conv_calls, c.conv_macs), (1, 16));
    }

    #[test]
    fn convolution_counts() {
        let square = layer(3, 3, 1);
        let wide = layer(3, 4, 2);
        assert_eq!(count_convolutions(&square, Mode::FoldedInference), 3);
        assert_eq!(count_convolutions(&wide, Mode::FoldedInference), 3);
        assert_eq!(count_convolutions(&square, Mode::UnfusedBaseline), 7);
        assert_eq!(count_convolutions(&square, Mode::TrainMultibranch), 7);
        assert_eq!(count_convolutions(&wide, Mode::TrainMultibranch), 6);
    }

    #[test]
    fn formulas_match_instruments() {
        for (ci, co) in [(3, 3), (2, 5)] {
            let l = layer(ci, co, 3);
            let x = random_input((2, ci, 5, 7), 4);
            for mode in Mode::ALL {
                let (_, counts) = measure(|| run_mode(&l, mode, &x).unwrap());
                let macs = count_macs(&l, (2, ci, 5, 7), mode).unwrap();
                assert!(macs.matches(&counts), "{mode}: {macs:?} vs {counts:?}");
                assert_eq!(counts.conv_calls, 2 * count_convolutions(&l, mode));
            }
        }
    }

    #[test]
    fn folded_is_cheaper() {
        let l = layer(32, 32, 5);
        let shape = (1, 32, 64, 64);
        let folded = count_macs(&l, shape, Mode::FoldedInference).unwrap().total();
        let multi = count_macs(&l, shape, Mode::TrainMultibranch).unwrap().total();
        assert!(folded < multi, "{folded} vs {multi}");
    }

    #[test]
    fn doubling_extent_quadruples_convs() {
        let l = layer(4, 4, 6);
        for mode in Mode::ALL {
            let a = count_macs(&l, (1, 4, 6, 5), mode).unwrap();
            let b = count_macs(&l, (1, 4, 12, 10), mode).unwrap();
            assert_eq!(b.conv, 4 * a.conv);
            assert_eq!(b.attention_matmul, 4 * a.attention_matmul);
            assert_eq!(b.weighting, 4 * a.weighting);
            assert_eq!(b.fold, a.fold);
        }
    }

    #[test]
    fn timing_preconditions() {
        let l = layer(2, 2, 7);
        assert!(time_modes(&l, (0, 2, 4, 4), 5, 1).is_err());
        assert!(time_modes(&l, (1, 2, 4, 4), 4, 1).is_err());
        let reports = time_modes(&l, (1, 2, 4, 4), 5, 1).unwrap();
        assert_eq!(reports.len(), 3);
        let mut csv = Vec::new();
        write_cost_csv(&reports, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 4);
        assert_eq!(format_cost_table(&reports).lines().count(), 4);
    }
}
