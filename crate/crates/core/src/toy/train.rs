use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::SyntheticScene;
use super::net::{forward_on_tape, ToyNet};
use crate::autodiff::{softmax_rows, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Epoch indices (0-based) from which the rate is multiplied by `decay_factor` again.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::with_epochs(24, 42)
    }
}

impl TrainConfig {
    /// Batch 8, rate 0.01, decayed by 0.1 after 2/3 and 11/12 of the epochs
    /// (after epochs 16 and 22 of 24).
    pub fn with_epochs(epochs: usize, seed: u64) -> Self {
        let decay_epochs = [2.0 / 3.0, 11.0 / 12.0]
            .iter()
            .map(|f| (epochs as f64 * f).round() as usize)
            .filter(|e| *e > 0 && *e < epochs)
            .collect();
        TrainConfig { batch_size: 8, lr: 0.01, epochs, decay_epochs, decay_factor: 0.1, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return bad(format!("learning rate {} must be finite and >= 0", self.lr));
        }
        if self.decay_factor.is_nan() || self.decay_factor <= 0.0 {
            return bad(format!("decay factor {} must be positive", self.decay_factor));
        }
        if let Some(e) = self.decay_epochs.iter().find(|e| **e >= self.epochs) {
            return bad(format!("decay epoch {e} is not before the last epoch {}", self.epochs));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|e| epoch >= **e).count();
        self.lr * self.decay_factor.powi(decays as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss of every epoch.
    pub loss_history: Vec<f64>,
    pub final_accuracy: f64,
}

pub fn batch_tensor(scenes: &[&SyntheticScene]) -> Result<Tensor4> {
    let images: Vec<Tensor4> = scenes.iter().map(|s| s.image.clone()).collect();
    Tensor4::stack(&images)
}

pub fn accuracy(net: &ToyNet, data: &[SyntheticScene]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty dataset".into()));
    }
    let mut correct = 0;
    for chunk in data.chunks(64) {
        let refs: Vec<&SyntheticScene> = chunk.iter().collect();
        let pred = net.predict(&batch_tensor(&refs)?)?;
        correct += pred.iter().zip(chunk).filter(|(p, s)| **p == s.size_class).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mean softmax cross-entropy of the net on `data`.
pub fn mean_loss(net: &ToyNet, data: &[SyntheticScene]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in data.chunks(64) {
        let refs: Vec<&SyntheticScene> = chunk.iter().collect();
        let logits = net.logits(&batch_tensor(&refs)?)?;
        let probs = softmax_rows(logits.data(), logits.rows(), logits.cols());
        for (i, s) in chunk.iter().enumerate() {
            total -= probs[i * logits.cols() + s.size_class].max(f64::MIN_POSITIVE).ln();
        }
    }
    Ok(total / data.len() as f64)
}

/// Mini-batch SGD on softmax cross-entropy over `size_class`.
pub fn train(net: &ToyNet, data: &[SyntheticScene], cfg: &TrainConfig) -> Result<(ToyNet, TrainReport)> {
    train_with_progress(net, data, cfg, |_, _, _| {})
}

/// [`train`] with a callback `(epoch, mean loss, learning rate)` after each epoch.
pub fn train_with_progress(
    net: &ToyNet,
    data: &[SyntheticScene],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, f64),
) -> Result<(ToyNet, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if let Some(s) = data.iter().find(|s| s.size_class >= net.n_classes()) {
        return Err(Error::InvalidArgument(format!(
            "class {} but the net has {} outputs",
            s.size_class,
            net.n_classes()
        )));
    }
    let mut params = net.params();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let scenes: Vec<&SyntheticScene> = idx.iter().map(|i| &data[*i]).collect();
            let labels: Vec<usize> = scenes.iter().map(|s| s.size_class).collect();
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape);
            let x = tape.leaf(batch_tensor(&scenes)?.into());
            let logits = forward_on_tape(&mut tape, &vars, x)?;
            let loss = tape.cross_entropy(logits, &labels)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, step, loss: value });
            }
            let grads = tape.backward(loss)?;
            params.accumulate(&tape, &grads, &vars);
            params.sgd_step(lr);
            epoch_loss += value;
            batches += 1;
        }
        let mean = epoch_loss / batches as f64;
        loss_history.push(mean);
        on_epoch(epoch, mean, lr);
    }

    let trained = ToyNet::from_params(&params, net.rng_seed)?;
    let final_accuracy = accuracy(&trained, data)?;
    Ok((trained, TrainReport { loss_history, final_accuracy }))
}

/// Training accuracy of a softmax regression on the image's mean intensity
/// alone. A reference point for how separable the size classes are.
pub fn mean_intensity_baseline(data: &[SyntheticScene], n_classes: usize) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let feats: Vec<f64> =
        data.iter().map(|s| s.image.data().iter().sum::<f64>() / s.image.data().len() as f64).collect();
    let mu = feats.iter().sum::<f64>() / feats.len() as f64;
    let sd = (feats.iter().map(|f| (f - mu).powi(2)).sum::<f64>() / feats.len() as f64).sqrt().max(1e-12);
    let z: Vec<f64> = feats.iter().map(|f| (f - mu) / sd).collect();
    let (mut w, mut b) = (vec![0.0; n_classes], vec![0.0; n_classes]);
    let n = data.len() as f64;
    for _ in 0..3000 {
        let (mut gw, mut gb) = (vec![0.0; n_classes], vec![0.0; n_classes]);
        for (x, s) in z.iter().zip(data) {
            let logits: Vec<f64> = (0..n_classes).map(|k| w[k] * x + b[k]).collect();
            let p = softmax_rows(&logits, 1, n_classes);
            for k in 0..n_classes {
                let d = p[k] - if k == s.size_class { 1.0 } else { 0.0 };
                gw[k] += d * x / n;
                gb[k] += d / n;
            }
        }
        for k in 0..n_classes {
            w[k] -= 2.0 * gw[k];
            b[k] -= 2.0 * gb[k];
        }
    }
    let correct = z
        .iter()
        .zip(data)
        .filter(|(x, s)| {
            let best = (0..n_classes).fold(0, |bk, k| if w[k] * **x + b[k] > w[bk] * **x + b[bk] { k } else { bk });
            best == s.size_class
        })
        .count();
    correct as f64 / n
}
