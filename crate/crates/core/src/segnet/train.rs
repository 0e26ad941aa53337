//! Supervised source pretraining.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Mode, SegModel};
use crate::adapt::AdamState;
use crate::data::{preprocess, Sample};
use crate::error::{Error, Result};
use crate::grid::RealGrid;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-3,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean per-pixel cross entropy over each epoch.
    pub epoch_loss: Vec<f64>,
}

/// Mean per-pixel cross entropy of a batch and its gradient w.r.t. the
/// logits.
fn cross_entropy<T: Scalar>(
    probs: &[RealGrid<T>],
    labels: &[&Sample<T>],
) -> (T, Vec<RealGrid<T>>) {
    let nc = probs[0].channels();
    let count = T::lit((probs.len() * probs[0].height() * probs[0].width()) as f64);
    let floor = T::lit(1e-12);
    let mut loss = T::zero();
    let grads = probs
        .iter()
        .zip(labels)
        .map(|(p, s)| {
            let mut g: Vec<T> = p.data().iter().map(|&v| v / count).collect();
            for (i, &y) in s.label.data().iter().enumerate() {
                let y = y as usize;
                loss -= p.data()[i * nc + y].max(floor).ln();
                g[i * nc + y] -= T::one() / count;
            }
            p.with_data(g)
        })
        .collect();
    (loss / count, grads)
}

/// Trains a fresh model (seeded by `cfg.seed`) on labeled samples with Adam
/// and returns it in eval mode, weights rounded to file precision.
pub fn train_source<T: Scalar>(
    samples: &[Sample<T>],
    n_classes: usize,
    cfg: &TrainConfig,
) -> Result<(SegModel<T>, TrainHistory)> {
    cfg.validate()?;
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    for s in samples {
        if (s.label.height(), s.label.width()) != (s.image.height(), s.image.width()) {
            return Err(Error::shape("label and image sizes differ"));
        }
        if s.label.max_label().map_or(false, |m| m as usize >= n_classes) {
            return Err(Error::invalid("label class out of range"));
        }
    }
    let mut model = SegModel::init(cfg.seed, first.image.channels(), n_classes)?;
    model.set_mode(Mode::Train);
    let inputs: Vec<RealGrid<T>> = samples.iter().map(|s| preprocess(&s.image)).collect();
    let mut adam = AdamState::new(model.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_5a11);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = TrainHistory::default();
    let lr = T::lit(cfg.lr);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<RealGrid<T>> = batch.iter().map(|&i| inputs[i].clone()).collect();
            let refs: Vec<&Sample<T>> = batch.iter().map(|&i| &samples[i]).collect();
            let (outs, cache) = model.forward_batch(&xs)?;
            let probs: Vec<RealGrid<T>> = outs.into_iter().map(|o| o.probs).collect();
            let (loss, grads) = cross_entropy(&probs, &refs);
            total += loss.to_f64_lossy() * batch.len() as f64;
            let dw = model.backward_weights(&cache, &grads)?;
            model.update_running_stats(&cache)?;
            adam.step(model.params_mut(), &dw, lr, T::zero())?;
        }
        history.epoch_loss.push(total / samples.len() as f64);
    }
    model.set_mode(Mode::Eval);
    model.round_to_f32();
    Ok((model, history))
}
