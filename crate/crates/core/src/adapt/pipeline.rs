//! Differentiable preprocessing around the prompt: the raw image is
//! standardized, the prompt is added, and the result is standardized again
//! before it reaches the model.

use crate::data::{standardize, StandardizeTape};
use crate::error::Result;
use crate::grid::RealGrid;
use crate::prompt::{PromptGradient, PromptedBatch, VisualPrompt};
use crate::scalar::Scalar;

/// Model inputs of one prompted batch with the state needed to chain input
/// gradients back to the prompt.
pub struct PipelineBatch<T> {
    prompted: PromptedBatch<T>,
    tapes: Vec<StandardizeTape<T>>,
    pub inputs: Vec<RealGrid<T>>,
}

/// `standardized` are raw images after the first standardization.
pub fn prompt_inputs<T: Scalar>(
    prompt: &dyn VisualPrompt<T>,
    standardized: &[RealGrid<T>],
) -> Result<PipelineBatch<T>> {
    let prompted = prompt.apply_batch(standardized)?;
    let (inputs, tapes) = prompted.images.iter().map(standardize).unzip();
    Ok(PipelineBatch {
        prompted,
        tapes,
        inputs,
    })
}

/// Same as [`prompt_inputs`] starting from raw images.
pub fn prepare_batch<T: Scalar>(
    prompt: &dyn VisualPrompt<T>,
    raw: &[RealGrid<T>],
) -> Result<PipelineBatch<T>> {
    let first: Vec<RealGrid<T>> = raw.iter().map(|x| standardize(x).0).collect();
    prompt_inputs(prompt, &first)
}

impl<T: Scalar> PipelineBatch<T> {
    /// Chains `dL/d(model input)` of every image to the prompt parameters.
    pub fn prompt_gradient(
        &self,
        prompt: &dyn VisualPrompt<T>,
        input_grads: &[RealGrid<T>],
    ) -> Result<PromptGradient<T>> {
        let grads: Vec<RealGrid<T>> = self
            .tapes
            .iter()
            .zip(input_grads)
            .map(|(t, g)| t.backward(g))
            .collect();
        let mut grad = prompt.backward_batch(&self.prompted, &grads)?;
        prompt.remove_constant_mode(&mut grad);
        Ok(grad)
    }
}
