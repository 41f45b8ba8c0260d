use drpn_core::autodiff::Tape;
use drpn_core::cost::{count_macs, Mode};
use drpn_core::io::{load_checkpoint, save_checkpoint};
use drpn_core::tensor::{add, conv2d, pad_kernel_to_3x3, scale, softmax_over_branches};
use drpn_core::{Array, DrpnLayer, Kernel4, Matrix, Tensor4};
use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensor(n: usize, c: usize, h: usize, w: usize) -> impl Strategy<Value = Tensor4> {
    vec(-2.0..2.0f64, n * c * h * w).prop_map(move |d| Tensor4::new(n, c, h, w, d).unwrap())
}

fn kernel(co: usize, ci: usize, kh: usize, kw: usize) -> impl Strategy<Value = Kernel4> {
    vec(-1.0..1.0f64, co * ci * kh * kw).prop_map(move |d| Kernel4::new(co, ci, kh, kw, d).unwrap())
}

fn extent() -> impl Strategy<Value = (usize, usize)> {
    prop::sample::select(vec![(3, 3), (1, 3), (3, 1), (1, 1)])
}

fn close(a: &Tensor4, b: &Tensor4, tol: f64) -> bool {
    a.max_abs_diff(b).unwrap() <= tol * (1.0 + a.max_abs().max(b.max_abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear_in_input_and_kernel(
        (x, y, k, k2, a) in (1..3usize, 1..4usize, 1..4usize, 3..8usize, 3..8usize, extent()).prop_flat_map(|(n, ci, co, h, w, (kh, kw))| {
            (tensor(n, ci, h, w), tensor(n, ci, h, w), kernel(co, ci, kh, kw), kernel(co, ci, kh, kw), -3.0..3.0f64)
        })
    ) {
        let (ph, pw) = (k.kh() / 2, k.kw() / 2);
        let lhs = conv2d(&add(&scale(&x, a), &y).unwrap(), &k, ph, pw).unwrap();
        let rhs = add(&scale(&conv2d(&x, &k, ph, pw).unwrap(), a), &conv2d(&y, &k, ph, pw).unwrap()).unwrap();
        prop_assert!(close(&lhs, &rhs, 1e-12));
        let lhs = conv2d(&x, &k.add(&k2).unwrap(), ph, pw).unwrap();
        let rhs = add(&conv2d(&x, &k, ph, pw).unwrap(), &conv2d(&x, &k2, ph, pw).unwrap()).unwrap();
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn padded_kernel_matches_same_padding(
        (x, k) in (1..3usize, 1..5usize, 1..5usize, 1..10usize, 1..10usize, extent()).prop_flat_map(|(n, ci, co, h, w, (kh, kw))| {
            (tensor(n, ci, h, w), kernel(co, ci, kh, kw))
        })
    ) {
        let direct = conv2d(&x, &k, k.kh() / 2, k.kw() / 2).unwrap();
        let padded = conv2d(&x, &pad_kernel_to_3x3(&k).unwrap(), 1, 1).unwrap();
        prop_assert!(direct.max_abs_diff(&padded).unwrap() <= 1e-12);
    }

    #[test]
    fn softmax_columns_are_distributions(rows in 1..6usize, cols in 1..6usize, data in vec(-50.0..50.0f64, 36)) {
        let m = Matrix::new(rows, cols, data[..rows * cols].to_vec()).unwrap();
        let s = softmax_over_branches(&m);
        for sum in s.column_sums() {
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }
        prop_assert!(s.data().iter().all(|v| *v > 0.0 && *v <= 1.0));
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact(
        tensors in vec((0..4usize).prop_flat_map(|rank| vec(0..4usize, rank)).prop_flat_map(|dims| {
            let len = dims.iter().product::<usize>();
            (Just(dims), vec(any::<f64>(), len))
        }), 0..6)
    ) {
        let named: Vec<(String, Array)> = tensors
            .into_iter()
            .enumerate()
            .map(|(i, (dims, data))| (format!("t{i}"), Array::new(dims, data).unwrap()))
            .collect();
        let back = load_checkpoint(&save_checkpoint(&named).unwrap()).unwrap();
        prop_assert_eq!(back.len(), named.len());
        for ((na, a), (nb, b)) in named.iter().zip(&back) {
            prop_assert_eq!(na, nb);
            prop_assert_eq!(a.dims(), b.dims());
            let bits = |x: &Array| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn mac_terms_scale_with_area(ci in 1..6usize, co in 1..6usize, h in 1..12usize, w in 1..12usize, seed in any::<u64>()) {
        let layer = DrpnLayer::random(ci, co, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for mode in Mode::ALL {
            let a = count_macs(&layer, (1, ci, h, w), mode).unwrap();
            let b = count_macs(&layer, (1, ci, 2 * h, 2 * w), mode).unwrap();
            let two = count_macs(&layer, (2, ci, h, w), mode).unwrap();
            prop_assert_eq!(b.conv, 4 * a.conv);
            prop_assert_eq!(b.weighting, 4 * a.weighting);
            prop_assert_eq!(b.attention_matmul, 4 * a.attention_matmul);
            prop_assert_eq!(b.fold, a.fold);
            prop_assert_eq!(two.total(), 2 * a.total());
        }
    }
}

// Both forward paths compute the same function, so their gradients agree too.
#[test]
fn folded_and_multibranch_gradients_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (ci, co) in [(3, 3), (2, 4)] {
        let layer = DrpnLayer::random_with_attention_std(ci, co, 0.5, &mut rng).unwrap();
        let x = Tensor4::from_fn(2, ci, 5, 4, |b, c, i, j| ((b * 13 + c * 7 + i * 3 + j) % 11) as f64 / 5.0 - 1.0);
        let grads = |folded: bool| {
            let mut tape = Tape::new();
            let lv = layer.bind(&mut tape);
            let xv = tape.leaf(x.clone().into());
            let y = if folded { lv.forward_inference(&mut tape, xv) } else { lv.forward_train(&mut tape, xv) }.unwrap();
            let sq = tape.mul(y, y).unwrap();
            let loss = tape.sum(sq).unwrap();
            let g = tape.backward(loss).unwrap();
            let mut all: Vec<Array> = lv.params().iter().map(|v| g.wrt(&tape, *v)).collect();
            all.push(g.wrt(&tape, xv));
            all
        };
        for (a, b) in grads(false).iter().zip(grads(true)) {
            let scale = 1.0 + a.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() <= 1e-10 * scale, "{u} vs {v}");
            }
        }
    }
}
