//! Self-checks of the layer's algebraic claims on seeded random instances.
//! The `verify` command runs these; each returns a named pass/fail outcome.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_check, GradCheck};
use crate::cost::{count_convolutions, count_macs, random_input, run_mode, Mode};
use crate::error::Result;
use crate::instrument::measure;
use crate::layer::{make_special_case, BranchKernels, DrpnLayer, LayerVars, SpecialCase};
use crate::tensor::{add, conv2d, identity_kernel, pad_kernel_to_3x3, scale, Array, Kernel4, Tensor4};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        CheckOutcome { name: name.into(), passed, detail }
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn uniform_tensor<R: Rng>(n: usize, c: usize, h: usize, w: usize, rng: &mut R) -> Tensor4 {
    Tensor4::from_fn(n, c, h, w, |_, _, _, _| rng.random_range(-1.0..1.0))
}

/// Multi-branch and folded outputs agree within `tol * (1 + max|y|)` on
/// `trials` random layers, half of them with a shortcut.
pub fn fold_equivalence(seed: u64, trials: usize, tol: f64) -> Result<CheckOutcome> {
    let mut r = rng(seed, 1);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let ci = r.random_range(1..=8);
        let co = if t % 2 == 0 { ci } else { r.random_range(1..=8) };
        let (h, w) = (r.random_range(4..=16), r.random_range(4..=16));
        let layer = DrpnLayer::random_with_attention_std(ci, co, 0.5, &mut r)?;
        let x = uniform_tensor(1, ci, h, w, &mut r);
        let y = layer.forward_train(&x)?;
        let z = layer.forward_inference(&x)?;
        worst = worst.max(y.max_abs_diff(&z)? / (1.0 + y.max_abs()));
    }
    Ok(CheckOutcome::new(
        "fold equivalence",
        worst <= tol,
        format!("{trials} layers, worst scaled deviation {worst:.3e} (tol {tol:.1e})"),
    ))
}

/// Fixed branch weights reproduce plain, residual, re-parameterized and
/// identity blocks.
pub fn special_cases(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut r = rng(seed, 2);
    let mut out = Vec::new();
    for case in SpecialCase::ALL {
        let c = r.random_range(1..=6);
        let kernels = BranchKernels::random(c, c, &mut r)?;
        let x = uniform_tensor(2, c, r.random_range(4..=10), r.random_range(4..=10), &mut r);
        let layer = make_special_case(case, kernels.clone())?;
        let expected = match case {
            SpecialCase::Vgg => conv2d(&x, &kernels.k3x3, 1, 1)?,
            SpecialCase::Resnet => add(&scale(&conv2d(&x, &kernels.k3x3, 1, 1)?, 0.5), &scale(&x, 0.5))?,
            SpecialCase::Repvgg => {
                let sum = add(&add(&conv2d(&x, &kernels.k3x3, 1, 1)?, &conv2d(&x, &kernels.k1x1, 0, 0)?)?, &x)?;
                scale(&sum, 1.0 / 3.0)
            }
            SpecialCase::Lightweight => x.clone(),
        };
        let tol = if case == SpecialCase::Lightweight { 0.0 } else { 1e-12 };
        let train = layer.forward_train(&x)?.max_abs_diff(&expected)?;
        let folded = layer.forward_inference(&x)?.max_abs_diff(&expected)?;
        let worst = train.max(folded);
        out.push(CheckOutcome::new(
            format!("special case {}", case.name()),
            worst <= tol,
            format!("max deviation {worst:.3e} (tol {tol:.0e})"),
        ));
    }
    Ok(out)
}

/// Zero-padding a 1x3, 3x1 or 1x1 kernel to 3x3 and convolving with padding 1
/// matches the original kernel with its own same padding.
pub fn kernel_padding(seed: u64, shapes: usize) -> Result<CheckOutcome> {
    let mut r = rng(seed, 3);
    let mut worst = 0.0f64;
    for (kh, kw) in [(1, 3), (3, 1), (1, 1)] {
        for _ in 0..shapes {
            let (co, ci) = (r.random_range(1..=6), r.random_range(1..=6));
            let x = uniform_tensor(r.random_range(1..=2), ci, r.random_range(3..=12), r.random_range(3..=12), &mut r);
            let k = Kernel4::new(co, ci, kh, kw, (0..co * ci * kh * kw).map(|_| r.random_range(-1.0..1.0)).collect())?;
            let direct = conv2d(&x, &k, kh / 2, kw / 2)?;
            let padded = conv2d(&x, &pad_kernel_to_3x3(&k)?, 1, 1)?;
            worst = worst.max(direct.max_abs_diff(&padded)?);
        }
    }
    Ok(CheckOutcome::new(
        "kernel padding",
        worst <= 1e-12,
        format!("3 extents x {shapes} shapes, max deviation {worst:.3e}"),
    ))
}

/// Generated weight columns are strictly positive and sum to one.
pub fn weight_validity(seed: u64, trials: usize) -> Result<CheckOutcome> {
    let mut r = rng(seed, 4);
    let (mut worst_sum, mut min_entry) = (0.0f64, f64::INFINITY);
    for _ in 0..trials {
        let ci = r.random_range(1..=8);
        let co = r.random_range(1..=8);
        let std = r.random_range(0.01..2.0);
        let layer = DrpnLayer::random_with_attention_std(ci, co, std, &mut r)?;
        let x = uniform_tensor(1, ci, r.random_range(2..=12), r.random_range(2..=12), &mut r);
        let w = layer.generate_weights(&x)?;
        for s in w.matrix().column_sums() {
            worst_sum = worst_sum.max((s - 1.0).abs());
        }
        min_entry = w.matrix().data().iter().copied().fold(min_entry, f64::min);
    }
    Ok(CheckOutcome::new(
        "weight validity",
        worst_sum <= 1e-12 && min_entry > 0.0,
        format!("{trials} layers, worst |column sum - 1| {worst_sum:.3e}, smallest entry {min_entry:.3e}"),
    ))
}

/// Tape gradients of `sum(r * forward_train(x))` with respect to every layer
/// parameter against central differences with step `h`.
pub fn layer_gradient_check(layer: &DrpnLayer, x: &Tensor4, r: &Tensor4, h: f64) -> Result<GradCheck> {
    let params: Vec<Array> = layer.named_arrays("p").into_iter().map(|(_, a)| a).collect();
    let (ci, co) = (layer.c_in(), layer.c_out());
    finite_diff_check(&params[..6], h, |tape, vars| {
        let lv = LayerVars::from_slice(ci, co, vars)?;
        let xv = tape.leaf(x.clone().into());
        let rv = tape.leaf(r.clone().into());
        let y = lv.forward_train(tape, xv)?;
        let yr = tape.mul(y, rv)?;
        tape.sum(yr)
    })
}

pub fn gradient(seed: u64) -> Result<CheckOutcome> {
    let mut r = rng(seed, 5);
    let layer = DrpnLayer::random_with_attention_std(2, 2, 0.5, &mut r)?;
    let x = uniform_tensor(1, 2, 6, 6, &mut r);
    let probe = uniform_tensor(1, 2, 6, 6, &mut r);
    let check = layer_gradient_check(&layer, &x, &probe, 1e-6)?;
    Ok(CheckOutcome::new(
        "gradient",
        check.max_rel_error <= 1e-6,
        format!("2->2 on 6x6, max relative error {:.3e} at {:?}", check.max_rel_error, check.worst),
    ))
}

/// Instrumented convolution and MAC counts equal the closed forms.
pub fn op_counts(seed: u64, shapes: usize) -> Result<CheckOutcome> {
    let mut r = rng(seed, 6);
    let mut failures = Vec::new();
    for i in 0..shapes {
        let ci = r.random_range(1..=6);
        let co = if i % 2 == 0 { ci } else { r.random_range(1..=6) };
        let shape = (r.random_range(1..=2), ci, r.random_range(3..=10), r.random_range(3..=10));
        let layer = DrpnLayer::random(ci, co, &mut r)?;
        let x = random_input(shape, r.random());
        for mode in Mode::ALL {
            let (y, counts) = measure(|| run_mode(&layer, mode, &x));
            y?;
            let macs = count_macs(&layer, shape, mode)?;
            let convs = shape.0 as u64 * count_convolutions(&layer, mode);
            if counts.conv_calls != convs || !macs.matches(&counts) {
                failures.push(format!("{mode} {shape:?} {ci}->{co}"));
            }
        }
    }
    Ok(CheckOutcome::new(
        "operation counts",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{shapes} shapes x 3 modes")
        } else {
            format!("mismatch: {}", failures.join("; "))
        },
    ))
}

/// Every suite with the sizes used by the `verify` command. `tol` bounds the
/// fold-equivalence deviation; the other checks carry their own thresholds.
pub fn run_all(seed: u64, tol: f64) -> Result<Vec<CheckOutcome>> {
    let mut out = vec![fold_equivalence(seed, 100, tol)?];
    out.extend(special_cases(seed)?);
    out.push(kernel_padding(seed, 20)?);
    out.push(weight_validity(seed, 50)?);
    out.push(gradient(seed)?);
    out.push(op_counts(seed, 20)?);
    // The shortcut kernel must be an exact identity for the folded path.
    let id = conv2d(&random_input((1, 3, 5, 5), seed), &identity_kernel(3), 1, 1)?;
    out.push(CheckOutcome::new(
        "identity kernel",
        id == random_input((1, 3, 5, 5), seed),
        "3x3 identity convolution is exact".into(),
    ));
    Ok(out)
}
