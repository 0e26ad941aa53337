use super::{PromptGradient, PromptedBatch, VisualPrompt};
use crate::error::{Error, Result};
use crate::grid::RealGrid;
use crate::scalar::Scalar;

/// Pixel-space padding prompt: a learnable frame of width `pad` around an
/// all-zero, non-learnable interior.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialPrompt<T> {
    pad: usize,
    height: usize,
    width: usize,
    channels: usize,
    /// Flat grid index of every learnable border entry.
    support: Vec<usize>,
    values: Vec<T>,
}

fn in_border(h: usize, w: usize, height: usize, width: usize, pad: usize) -> bool {
    h < pad || w < pad || h + pad >= height || w + pad >= width
}

impl<T: Scalar> SpatialPrompt<T> {
    pub fn new(pad: usize, height: usize, width: usize, channels: usize) -> Result<Self> {
        if pad == 0 {
            return Err(Error::invalid("pad width must be at least 1"));
        }
        if 2 * pad > height.min(width) {
            return Err(Error::invalid(format!(
                "pad width {pad} too large for {height}x{width}"
            )));
        }
        if channels == 0 {
            return Err(Error::invalid("prompt needs at least one channel"));
        }
        let mut support = Vec::new();
        for h in 0..height {
            for w in 0..width {
                if in_border(h, w, height, width, pad) {
                    for c in 0..channels {
                        support.push((h * width + w) * channels + c);
                    }
                }
            }
        }
        let values = vec![T::zero(); support.len()];
        Ok(Self {
            pad,
            height,
            width,
            channels,
            support,
            values,
        })
    }

    pub(crate) fn from_parts(
        pad: usize,
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<T>,
    ) -> Result<Self> {
        let mut p = Self::new(pad, height, width, channels)?;
        if values.len() != p.values.len() {
            return Err(Error::shape("spatial prompt value count"));
        }
        p.values = values;
        Ok(p)
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// The full `H x W x C` prompt with zeros in the interior.
    pub fn grid(&self) -> RealGrid<T> {
        let mut g = RealGrid::zeros(self.height, self.width, self.channels);
        for (&i, &v) in self.support.iter().zip(&self.values) {
            g.data_mut()[i] = v;
        }
        g
    }
}

/// `x + s` elementwise.
pub fn apply_svp<T: Scalar>(x: &RealGrid<T>, s: &SpatialPrompt<T>) -> Result<RealGrid<T>> {
    x.ensure_shape(s.shape(), "spatial prompt")?;
    let mut out = x.clone();
    for (&i, &v) in s.support.iter().zip(&s.values) {
        out.data_mut()[i] += v;
    }
    Ok(out)
}

impl<T: Scalar> VisualPrompt<T> for SpatialPrompt<T> {
    fn num_learnable(&self) -> usize {
        self.values.len()
    }

    fn learnable(&self) -> &[T] {
        &self.values
    }

    fn learnable_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    fn apply_batch(&self, images: &[RealGrid<T>]) -> Result<PromptedBatch<T>> {
        let images = images
            .iter()
            .map(|x| apply_svp(x, self))
            .collect::<Result<Vec<_>>>()?;
        Ok(PromptedBatch {
            images,
            spectra: Vec::new(),
        })
    }

    fn backward_batch(
        &self,
        batch: &PromptedBatch<T>,
        grads: &[RealGrid<T>],
    ) -> Result<PromptGradient<T>> {
        if grads.len() != batch.images.len() {
            return Err(Error::shape("gradient count != batch size"));
        }
        let mut g = PromptGradient::zeros(self.values.len());
        for grad in grads {
            grad.ensure_shape(self.shape(), "spatial prompt gradient")?;
            for (acc, &i) in g.values.iter_mut().zip(&self.support) {
                *acc += grad.data()[i];
            }
        }
        Ok(g)
    }
}
