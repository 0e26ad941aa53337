//! Prompt optimization against a frozen model.
//!
//! Reliable labels are computed once per run from the unprompted target
//! images. Every step then prompts a batch, runs the frozen model, scores it
//! with the selection-masked cross entropy and moves the prompt with Adam.

pub mod adam;
mod loss;
mod pipeline;

pub use adam::AdamState;
pub use loss::{seg_loss, LOG_FLOOR};
pub use pipeline::{prepare_batch, prompt_inputs, PipelineBatch};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::standardize;
use crate::error::{Error, Result};
use crate::grid::RealGrid;
use crate::prompt::{Prompt, PromptGradient, PromptKind, VisualPrompt};
use crate::pseudo::{reliable_labels, ReliableLabel, SelectionConfig};
use crate::scalar::Scalar;
use crate::segnet::{Mode, SegModel};

/// The learning rates tried by default.
pub const LR_GRID: [f64; 3] = [0.01, 0.1, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub variant: PromptKind,
    /// Box side `r` for the spectral variants, pad width for `svp`.
    pub size: usize,
    pub selection: SelectionConfig,
    /// Candidate learning rates. With more than one, a full run is made per
    /// rate and the one with the lowest final pseudo-label loss is kept.
    pub learning_rates: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            variant: PromptKind::Complex,
            size: 16,
            selection: SelectionConfig::default(),
            learning_rates: LR_GRID.to_vec(),
            epochs: 50,
            batch_size: 8,
            weight_decay: 1e-5,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        if self.size == 0 {
            return Err(Error::invalid("prompt size must be at least 1"));
        }
        if self.learning_rates.is_empty() {
            return Err(Error::invalid("at least one learning rate required"));
        }
        if let Some(lr) = self.learning_rates.iter().find(|lr| !(**lr > 0.0 && lr.is_finite())) {
            return Err(Error::invalid(format!("learning rate {lr} must be positive")));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrRun {
    pub lr: f64,
    pub epoch_loss: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub config: AdaptConfig,
    pub learnable_params: usize,
    pub optimizer_params: usize,
    /// Fraction of target pixels carrying a reliable label.
    pub selected_fraction: f64,
    pub chosen_lr: f64,
    /// Mean per-image loss of each epoch of the chosen run.
    pub epoch_loss: Vec<f64>,
    pub lr_sweep: Vec<LrRun>,
    pub model_checksum_before: String,
    pub model_checksum_after: String,
    pub warnings: Vec<String>,
    /// Left out of serialized reports unless set, so that reports of
    /// identical runs compare equal byte for byte.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
}

/// Batch-mean loss of prompted images against their reliable labels.
pub fn batch_loss<T: Scalar>(
    model: &SegModel<T>,
    prompt: &dyn VisualPrompt<T>,
    standardized: &[RealGrid<T>],
    labels: &[&ReliableLabel],
) -> Result<T> {
    let batch = prompt_inputs(prompt, standardized)?;
    let (outs, _) = model.forward_batch(&batch.inputs)?;
    let mut total = T::zero();
    for (o, l) in outs.iter().zip(labels) {
        total += seg_loss(&o.probs, l)?.0;
    }
    Ok(total / T::lit(labels.len() as f64))
}

/// Batch-mean loss and its gradient w.r.t. the prompt parameters.
pub fn batch_loss_and_grad<T: Scalar>(
    model: &SegModel<T>,
    prompt: &dyn VisualPrompt<T>,
    standardized: &[RealGrid<T>],
    labels: &[&ReliableLabel],
) -> Result<(T, PromptGradient<T>)> {
    if standardized.len() != labels.len() {
        return Err(Error::shape("one reliable label per image required"));
    }
    let batch = prompt_inputs(prompt, standardized)?;
    let (outs, cache) = model.forward_batch(&batch.inputs)?;
    let scale = T::one() / T::lit(labels.len() as f64);
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(outs.len());
    for (o, l) in outs.iter().zip(labels) {
        let (loss, g) = seg_loss(&o.probs, l)?;
        total += loss;
        grads.push(g.scale(scale));
    }
    let input_grads = model.backward_input(&cache, &grads)?;
    let grad = batch.prompt_gradient(prompt, &input_grads)?;
    Ok((total * scale, grad))
}

fn run_one<T: Scalar>(
    model: &SegModel<T>,
    standardized: &[RealGrid<T>],
    labels: &[ReliableLabel],
    cfg: &AdaptConfig,
    lr: f64,
) -> Result<(Prompt<T>, Vec<f64>, usize)> {
    let (h, w, c) = standardized[0].shape();
    let mut prompt = Prompt::new(cfg.variant, cfg.size, h, w, c)?;
    let mut adam = AdamState::new(prompt.num_learnable());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..standardized.len()).collect();
    let (lr, wd) = (T::lit(lr), T::lit(cfg.weight_decay));
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let xs: Vec<RealGrid<T>> = idx.iter().map(|&i| standardized[i].clone()).collect();
            let ls: Vec<&ReliableLabel> = idx.iter().map(|&i| &labels[i]).collect();
            let (loss, grad) = batch_loss_and_grad(model, &prompt, &xs, &ls)?;
            total += loss.to_f64_lossy() * idx.len() as f64;
            adam.step(prompt.learnable_mut(), &grad.values, lr, wd)?;
        }
        epoch_loss.push(total / standardized.len() as f64);
    }
    Ok((prompt, epoch_loss, adam.len()))
}

/// Learns a prompt for unlabeled target images under a frozen model.
pub fn adapt<T: Scalar>(
    model: &SegModel<T>,
    targets: &[RealGrid<T>],
    cfg: &AdaptConfig,
) -> Result<(Prompt<T>, AdaptReport)> {
    let start = Instant::now();
    cfg.validate()?;
    if model.mode() != Mode::Eval {
        return Err(Error::Mode {
            required: "eval",
            actual: "train",
        });
    }
    let first = targets.first().ok_or(Error::EmptyDataset)?;
    for x in targets {
        x.ensure_shape(first.shape(), "target image")?;
    }
    let (h, w, c) = first.shape();
    // reject bad prompt geometry before the expensive part
    Prompt::<T>::new(cfg.variant, cfg.size, h, w, c)?;
    let checksum_before = model.checksum();

    let standardized: Vec<RealGrid<T>> = targets.iter().map(|x| standardize(x).0).collect();
    let labels = standardized
        .iter()
        .map(|x| reliable_labels(model, &standardize(x).0, &cfg.selection))
        .collect::<Result<Vec<_>>>()?;
    let selected: usize = labels.iter().map(ReliableLabel::selected_count).sum();
    let selected_fraction = selected as f64 / (targets.len() * h * w) as f64;
    let mut warnings = Vec::new();
    if selected == 0 && cfg.epochs > 0 {
        warnings.push(format!(
            "no reliable pixels selected in any image; all {} epochs ran with zero loss",
            cfg.epochs
        ));
    }

    let mut best: Option<(Prompt<T>, f64, usize)> = None;
    let mut sweep = Vec::with_capacity(cfg.learning_rates.len());
    let mut optimizer_params = 0;
    for &lr in &cfg.learning_rates {
        let (prompt, losses, n_opt) = run_one(model, &standardized, &labels, cfg, lr)?;
        optimizer_params = n_opt;
        let last = losses.last().copied().unwrap_or(f64::INFINITY);
        let better = match &best {
            None => true,
            Some((_, _, i)) => last < sweep_last(&sweep, *i),
        };
        sweep.push(LrRun {
            lr,
            epoch_loss: losses,
        });
        if better {
            best = Some((prompt, lr, sweep.len() - 1));
        }
    }
    let (prompt, chosen_lr, idx) = best.expect("at least one learning rate");

    let checksum_after = model.checksum();
    if checksum_after != checksum_before {
        return Err(Error::invalid("model weights changed during adaptation"));
    }
    let report = AdaptReport {
        config: cfg.clone(),
        learnable_params: prompt.num_learnable(),
        optimizer_params,
        selected_fraction,
        chosen_lr,
        epoch_loss: sweep[idx].epoch_loss.clone(),
        lr_sweep: sweep,
        model_checksum_before: checksum_before,
        model_checksum_after: checksum_after,
        warnings,
        wall_clock_secs: Some(start.elapsed().as_secs_f64()),
    };
    Ok((prompt, report))
}

fn sweep_last(sweep: &[LrRun], i: usize) -> f64 {
    sweep[i].epoch_loss.last().copied().unwrap_or(f64::INFINITY)
}
