//! Learnable input-space prompts.
//!
//! [`SpectrumPrompt`] lives in a centered low-frequency box of the image
//! spectrum; [`SpatialPrompt`] is the pixel-space padding baseline. Both are
//! dataset-level: one parameter set is shared by every image.

mod io;
mod spatial;
mod spectral;

pub use io::{load_prompt, read_prompt, save_prompt, write_prompt, PROMPT_MAGIC, PROMPT_VERSION};
pub use spatial::{apply_svp, SpatialPrompt};
pub use spectral::{
    apply_complex, apply_real, embed_centered, embed_prompt, FvpVariant, SpectrumPrompt,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{AmpPhase, RealGrid};
use crate::scalar::Scalar;

/// Gradient of a scalar loss w.r.t. a prompt's learnable parameters, laid out
/// like [`VisualPrompt::learnable`].
#[derive(Clone, Debug, PartialEq)]
pub struct PromptGradient<T> {
    pub values: Vec<T>,
}

impl<T: Scalar> PromptGradient<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![T::zero(); n],
        }
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

/// Prompted images of one batch together with whatever the backward pass
/// needs from the forward pass.
#[derive(Clone, Debug)]
pub struct PromptedBatch<T> {
    pub images: Vec<RealGrid<T>>,
    /// Polar spectra of the unprompted inputs; only filled by the
    /// amplitude/phase variants.
    pub(crate) spectra: Vec<AmpPhase<T>>,
}

pub trait VisualPrompt<T: Scalar>: Send + Sync {
    fn num_learnable(&self) -> usize;

    fn learnable(&self) -> &[T];

    fn learnable_mut(&mut self) -> &mut [T];

    /// Applies the prompt to every image of a batch.
    fn apply_batch(&self, images: &[RealGrid<T>]) -> Result<PromptedBatch<T>>;

    /// Chains per-image `dL/dx_hat` back to the learnable parameters, summed
    /// over the batch.
    fn backward_batch(
        &self,
        batch: &PromptedBatch<T>,
        grads: &[RealGrid<T>],
    ) -> Result<PromptGradient<T>>;

    /// Removes the gradient component along directions that only add a
    /// constant to every pixel of every channel. Called when the prompted
    /// image is standardized, which makes the loss invariant to such shifts.
    fn remove_constant_mode(&self, _grad: &mut PromptGradient<T>) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Complex,
    Amplitude,
    Phase,
    Svp,
}

impl PromptKind {
    pub fn name(self) -> &'static str {
        match self {
            PromptKind::Complex => "complex",
            PromptKind::Amplitude => "amplitude",
            PromptKind::Phase => "phase",
            PromptKind::Svp => "svp",
        }
    }
}

impl std::str::FromStr for PromptKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "complex" => Ok(PromptKind::Complex),
            "amplitude" => Ok(PromptKind::Amplitude),
            "phase" => Ok(PromptKind::Phase),
            "svp" => Ok(PromptKind::Svp),
            other => Err(format!(
                "unknown prompt variant `{other}` (complex|amplitude|phase|svp)"
            )),
        }
    }
}

/// Either prompt family behind one type.
#[derive(Clone, Debug, PartialEq)]
pub enum Prompt<T> {
    Spectrum(SpectrumPrompt<T>),
    Spatial(SpatialPrompt<T>),
}

impl<T: Scalar> Prompt<T> {
    /// Zero-initialized prompt. `size` is the box side `r` for the spectral
    /// variants and the pad width for `svp`.
    pub fn new(
        kind: PromptKind,
        size: usize,
        height: usize,
        width: usize,
        channels: usize,
    ) -> Result<Self> {
        let variant = match kind {
            PromptKind::Complex => FvpVariant::Complex,
            PromptKind::Amplitude => FvpVariant::Amplitude,
            PromptKind::Phase => FvpVariant::Phase,
            PromptKind::Svp => {
                return SpatialPrompt::new(size, height, width, channels).map(Prompt::Spatial)
            }
        };
        let p = SpectrumPrompt::new(size, channels, variant)?;
        p.check_fits(height, width)?;
        Ok(Prompt::Spectrum(p))
    }

    pub fn kind(&self) -> PromptKind {
        match self {
            Prompt::Spectrum(p) => match p.variant() {
                FvpVariant::Complex => PromptKind::Complex,
                FvpVariant::Amplitude => PromptKind::Amplitude,
                FvpVariant::Phase => PromptKind::Phase,
            },
            Prompt::Spatial(_) => PromptKind::Svp,
        }
    }

    fn inner(&self) -> &dyn VisualPrompt<T> {
        match self {
            Prompt::Spectrum(p) => p,
            Prompt::Spatial(p) => p,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn VisualPrompt<T> {
        match self {
            Prompt::Spectrum(p) => p,
            Prompt::Spatial(p) => p,
        }
    }
}

impl<T: Scalar> VisualPrompt<T> for Prompt<T> {
    fn num_learnable(&self) -> usize {
        self.inner().num_learnable()
    }

    fn learnable(&self) -> &[T] {
        self.inner().learnable()
    }

    fn learnable_mut(&mut self) -> &mut [T] {
        self.inner_mut().learnable_mut()
    }

    fn apply_batch(&self, images: &[RealGrid<T>]) -> Result<PromptedBatch<T>> {
        self.inner().apply_batch(images)
    }

    fn backward_batch(
        &self,
        batch: &PromptedBatch<T>,
        grads: &[RealGrid<T>],
    ) -> Result<PromptGradient<T>> {
        self.inner().backward_batch(batch, grads)
    }

    fn remove_constant_mode(&self, grad: &mut PromptGradient<T>) {
        self.inner().remove_constant_mode(grad)
    }
}
