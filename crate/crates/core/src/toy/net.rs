use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::layer::{BranchWeights, DrpnLayer, LayerVars};
use crate::tensor::{avg_pool2, global_avg_pool, matmul, relu, Array, Matrix, Tensor4};

/// Width of both DRPN layers.
pub const HIDDEN: usize = 8;

/// `DRPN(1->8) - ReLU - avgpool 2x2 - DRPN(8->8) - ReLU - global avgpool - linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    pub drpn1: DrpnLayer,
    pub drpn2: DrpnLayer,
    /// `HIDDEN x n_classes`.
    pub head_weight: Matrix,
    pub head_bias: Vec<f64>,
    pub rng_seed: u64,
}

/// Which DRPN layer to read weights from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProbeLayer {
    First,
    #[default]
    Last,
}

/// Initialisation scales of a [`ToyNet`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetInit {
    /// Std of the `f1`, `f2` weight-generator convolutions.
    pub attention_std: f64,
    /// Std of the linear head.
    pub head_std: f64,
}

impl Default for NetInit {
    fn default() -> Self {
        NetInit { attention_std: 0.01, head_std: (1.0 / HIDDEN as f64).sqrt() }
    }
}

impl ToyNet {
    pub fn new(n_classes: usize, seed: u64) -> Result<Self> {
        ToyNet::with_init(n_classes, seed, NetInit::default())
    }

    pub fn with_init(n_classes: usize, seed: u64, init: NetInit) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {n_classes}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let drpn1 = DrpnLayer::random_with_attention_std(1, HIDDEN, init.attention_std, &mut rng)?;
        let drpn2 = DrpnLayer::random_with_attention_std(HIDDEN, HIDDEN, init.attention_std, &mut rng)?;
        let normal = Normal::new(0.0, init.head_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let head_weight =
            Matrix::new(HIDDEN, n_classes, (0..HIDDEN * n_classes).map(|_| normal.sample(&mut rng)).collect())?;
        Ok(ToyNet { drpn1, drpn2, head_weight, head_bias: vec![0.0; n_classes], rng_seed: seed })
    }

    /// Same as [`ToyNet::new`] but with `f1 = f2 = 0` in both layers, so every
    /// generated weight starts at exactly `1 / B`.
    pub fn new_zero_attention(n_classes: usize, seed: u64) -> Result<Self> {
        let mut net = ToyNet::new(n_classes, seed)?;
        net.drpn1.zero_attention();
        net.drpn2.zero_attention();
        Ok(net)
    }

    pub fn n_classes(&self) -> usize {
        self.head_bias.len()
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        if x.c() != 1 || x.h() < 2 || x.w() < 2 {
            return Err(Error::Shape(format!("toy net expects (n, 1, h>=2, w>=2), got {:?}", x.shape())));
        }
        Ok(())
    }

    /// Input of the second DRPN layer, computed with folded inference.
    pub fn layer2_input(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        avg_pool2(&relu(&self.drpn1.forward_inference(x)?))
    }

    /// Logits `n x n_classes` via the folded layers.
    pub fn logits(&self, x: &Tensor4) -> Result<Matrix> {
        let h = relu(&self.drpn2.forward_inference(&self.layer2_input(x)?)?);
        let mut out = matmul(&global_avg_pool(&h), &self.head_weight)?;
        for r in 0..out.rows() {
            for (c, b) in self.head_bias.iter().enumerate() {
                out.set(r, c, out.get(r, c) + b);
            }
        }
        Ok(out)
    }

    pub fn predict(&self, x: &Tensor4) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok((0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
            })
            .collect())
    }

    /// Weights generated at `layer` for a single image.
    pub fn branch_weights(&self, x: &Tensor4, layer: ProbeLayer) -> Result<BranchWeights> {
        self.check_input(x)?;
        match layer {
            ProbeLayer::First => self.drpn1.generate_weights(x),
            ProbeLayer::Last => self.drpn2.generate_weights(&self.layer2_input(x)?),
        }
    }

    /// Parameters in a fixed order: `drpn1.*`, `drpn2.*`, `head.weight`, `head.bias`.
    pub fn params(&self) -> ParamSet {
        let mut set = ParamSet::new();
        for (name, a) in self.named_arrays() {
            set.push(name, a).expect("unique parameter names");
        }
        set
    }

    pub fn named_arrays(&self) -> Vec<(String, Array)> {
        let mut out = self.drpn1.named_arrays("drpn1");
        out.extend(self.drpn2.named_arrays("drpn2"));
        out.push(("head.weight".into(), self.head_weight.clone().into()));
        out.push(("head.bias".into(), Array::new(vec![self.n_classes()], self.head_bias.clone()).expect("bias dims")));
        out
    }

    pub fn from_named_arrays(lookup: impl Fn(&str) -> Option<Array>, rng_seed: u64) -> Result<Self> {
        let drpn1 = DrpnLayer::from_named_arrays("drpn1", &lookup)?;
        let drpn2 = DrpnLayer::from_named_arrays("drpn2", &lookup)?;
        let missing = |n: &str| Error::Format(format!("missing tensor {n:?}"));
        let head_weight: Matrix = lookup("head.weight").ok_or_else(|| missing("head.weight"))?.try_into()?;
        let head_bias = lookup("head.bias").ok_or_else(|| missing("head.bias"))?.into_data();
        if (drpn1.c_in(), drpn1.c_out(), drpn2.c_in(), drpn2.c_out()) != (1, HIDDEN, HIDDEN, HIDDEN)
            || head_weight.rows() != HIDDEN
            || head_weight.cols() != head_bias.len()
        {
            return Err(Error::Format("toy network tensors have inconsistent shapes".into()));
        }
        Ok(ToyNet { drpn1, drpn2, head_weight, head_bias, rng_seed })
    }

    pub fn from_params(params: &ParamSet, rng_seed: u64) -> Result<Self> {
        ToyNet::from_named_arrays(|n| params.by_name(n).map(|p| p.value.clone()), rng_seed)
    }
}

/// Records the multi-branch forward of a batch on `tape`, using parameters
/// bound from [`ToyNet::params`]. Returns the logits node.
pub fn forward_on_tape(tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
    if vars.len() != 14 {
        return Err(Error::Shape(format!("expected 14 parameter handles, got {}", vars.len())));
    }
    let l1 = LayerVars::from_slice(1, HIDDEN, &vars[0..6])?;
    let l2 = LayerVars::from_slice(HIDDEN, HIDDEN, &vars[6..12])?;
    let h = l1.forward_train(tape, x)?;
    let h = tape.relu(h)?;
    let h = tape.avg_pool2(h)?;
    let h = l2.forward_train(tape, h)?;
    let h = tape.relu(h)?;
    let pooled = tape.global_avg_pool(h)?;
    let logits = tape.matmul(pooled, vars[12])?;
    tape.add_row_bias(logits, vars[13])
}
