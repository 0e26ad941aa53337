use num_complex::Complex;

use super::{PromptGradient, PromptedBatch, VisualPrompt};
use crate::error::{Error, Result};
use crate::grid::{
    amp_phase_merge, amp_phase_split, fft2_real, fftshift, ifft2, AmpPhase, ComplexGrid,
    RealGrid,
};
use crate::scalar::Scalar;

/// Which part of the spectrum the prompt is added to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FvpVariant {
    /// Unconstrained complex coefficients added to the spectrum.
    Complex,
    /// Real coefficients added to the amplitude.
    Amplitude,
    /// Real coefficients added to the phase.
    Phase,
}

/// Learnable `r x r x C` box of spectral coefficients, centered on the zero
/// frequency. Parameters are stored as a real block followed by an imaginary
/// block, each in `(row, col, channel)` order; the imaginary block stays zero
/// for the amplitude and phase variants.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumPrompt<T> {
    r: usize,
    channels: usize,
    variant: FvpVariant,
    coeffs: Vec<T>,
}

impl<T: Scalar> SpectrumPrompt<T> {
    pub fn new(r: usize, channels: usize, variant: FvpVariant) -> Result<Self> {
        if r == 0 {
            return Err(Error::invalid("prompt size r must be at least 1"));
        }
        if channels == 0 {
            return Err(Error::invalid("prompt needs at least one channel"));
        }
        Ok(Self {
            r,
            channels,
            variant,
            coeffs: vec![T::zero(); 2 * r * r * channels],
        })
    }

    pub(crate) fn from_parts(
        r: usize,
        channels: usize,
        variant: FvpVariant,
        coeffs: Vec<T>,
    ) -> Result<Self> {
        let mut p = Self::new(r, channels, variant)?;
        if coeffs.len() != p.coeffs.len() {
            return Err(Error::shape("prompt coefficient count"));
        }
        if variant != FvpVariant::Complex && coeffs[p.block()..].iter().any(|v| !v.is_zero()) {
            return Err(Error::invalid("real prompt variant with nonzero imaginary part"));
        }
        p.coeffs = coeffs;
        Ok(p)
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn variant(&self) -> FvpVariant {
        self.variant
    }

    fn block(&self) -> usize {
        self.r * self.r * self.channels
    }

    pub fn real_part(&self) -> &[T] {
        &self.coeffs[..self.block()]
    }

    pub fn imag_part(&self) -> &[T] {
        &self.coeffs[self.block()..]
    }

    pub(crate) fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    /// Parameter index of box cell `(i, j, c)` in the real block.
    #[inline]
    pub fn param_index(&self, i: usize, j: usize, c: usize) -> usize {
        (i * self.r + j) * self.channels + c
    }

    /// Box cell holding the zero frequency.
    pub fn dc_cell(&self) -> (usize, usize) {
        (self.r / 2, self.r / 2)
    }

    pub fn check_fits(&self, height: usize, width: usize) -> Result<()> {
        if self.r > height.min(width) {
            return Err(Error::invalid(format!(
                "prompt size r={} exceeds image size {height}x{width}",
                self.r
            )));
        }
        Ok(())
    }

    /// Unshifted frequency row/column of box row/column `i` for axis length `n`.
    #[inline]
    fn freq(&self, i: usize, n: usize) -> usize {
        (i + n - self.r / 2) % n
    }

    /// `(box row, box col, freq row, freq col)` for every box cell.
    fn cells(&self, height: usize, width: usize) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        (0..self.r).flat_map(move |i| {
            (0..self.r).map(move |j| (i, j, self.freq(i, height), self.freq(j, width)))
        })
    }

    fn check_image(&self, x: &RealGrid<T>) -> Result<()> {
        if x.channels() != self.channels {
            return Err(Error::shape(format!(
                "image has {} channels, prompt has {}",
                x.channels(),
                self.channels
            )));
        }
        self.check_fits(x.height(), x.width())
    }

    /// Spatial contribution `Re(ifft2(embed(v)))` of a complex prompt.
    pub fn spatial_pattern(&self, height: usize, width: usize) -> Result<RealGrid<T>> {
        Ok(ifft2(&embed_prompt(self, height, width)?)?.re())
    }

    /// Gradient for the complex variant given `dL/dx_hat` (already summed over
    /// the batch). The map is linear, so the gradient is the spectrum of the
    /// upstream gradient divided by `H W`, read off at the box bins.
    pub fn backward_complex(&self, grad_xhat: &RealGrid<T>) -> Result<PromptGradient<T>> {
        if self.variant != FvpVariant::Complex {
            return Err(Error::invalid("backward_complex on a real prompt variant"));
        }
        self.check_image(grad_xhat)?;
        grad_xhat.check_finite("prompt upstream gradient")?;
        let gamma = self.upstream_spectrum(grad_xhat)?;
        let block = self.block();
        let mut g = PromptGradient::zeros(2 * block);
        for (i, j, u, q) in self.cells(grad_xhat.height(), grad_xhat.width()) {
            for c in 0..self.channels {
                let z = gamma.get(u, q, c);
                let p = self.param_index(i, j, c);
                g.values[p] = z.re;
                g.values[block + p] = z.im;
            }
        }
        Ok(g)
    }

    /// Gradient for the amplitude/phase variants for one image, given the
    /// polar spectrum of the unprompted image.
    pub fn backward_real(
        &self,
        source: &AmpPhase<T>,
        grad_xhat: &RealGrid<T>,
    ) -> Result<PromptGradient<T>> {
        if self.variant == FvpVariant::Complex {
            return Err(Error::invalid("backward_real on a complex prompt"));
        }
        self.check_image(grad_xhat)?;
        source.amplitude.ensure_shape(grad_xhat.shape(), "source spectrum")?;
        grad_xhat.check_finite("prompt upstream gradient")?;
        let gamma = self.upstream_spectrum(grad_xhat)?;
        let mut g = PromptGradient::zeros(self.block());
        for (i, j, u, q) in self.cells(grad_xhat.height(), grad_xhat.width()) {
            for c in 0..self.channels {
                let p = self.param_index(i, j, c);
                let phi = source.phase.get(u, q, c);
                // d(spectrum bin)/d(parameter)
                let dz = match self.variant {
                    FvpVariant::Amplitude => Complex::from_polar(T::one(), phi),
                    _ => {
                        let amp = source.amplitude.get(u, q, c);
                        Complex::<T>::i() * Complex::from_polar(amp, phi + self.coeffs[p])
                    }
                };
                g.values[p] = (gamma.get(u, q, c) * dz.conj()).re;
            }
        }
        Ok(g)
    }

    /// `fft2(G) / (H W)`: the Wirtinger-style gradient of the loss w.r.t. the
    /// real and imaginary parts of every spectrum bin feeding `Re(ifft2(.))`.
    fn upstream_spectrum(&self, grad_xhat: &RealGrid<T>) -> Result<ComplexGrid<T>> {
        let mut gamma = fft2_real(grad_xhat)?;
        let norm = T::one() / T::lit((grad_xhat.height() * grad_xhat.width()) as f64);
        for z in gamma.data_mut() {
            *z = *z * norm;
        }
        Ok(gamma)
    }

    fn apply_real_one(&self, x: &RealGrid<T>) -> Result<(RealGrid<T>, AmpPhase<T>)> {
        self.check_image(x)?;
        let source = amp_phase_split(&fft2_real(x)?);
        let mut modified = source.clone();
        let target = match self.variant {
            FvpVariant::Amplitude => &mut modified.amplitude,
            FvpVariant::Phase => &mut modified.phase,
            FvpVariant::Complex => unreachable!("complex prompts are applied additively"),
        };
        for (i, j, u, q) in self.cells(x.height(), x.width()) {
            for c in 0..self.channels {
                let v = target.get(u, q, c) + self.coeffs[self.param_index(i, j, c)];
                target.set(u, q, c, v);
            }
        }
        let out = ifft2(&amp_phase_merge(&modified)?)?.re();
        Ok((out, source))
    }
}

/// Places the prompt box into a full `H x W x C` spectrum in DC-at-origin
/// layout. Bins outside the box are zero.
pub fn embed_prompt<T: Scalar>(
    v: &SpectrumPrompt<T>,
    height: usize,
    width: usize,
) -> Result<ComplexGrid<T>> {
    v.check_fits(height, width)?;
    let mut z = ComplexGrid::zeros(height, width, v.channels);
    for (i, j, u, q) in v.cells(height, width) {
        for c in 0..v.channels {
            let p = v.param_index(i, j, c);
            z.set(u, q, c, Complex::new(v.real_part()[p], v.imag_part()[p]));
        }
    }
    Ok(z)
}

/// Same as [`embed_prompt`] but in the centered (fftshifted) layout.
pub fn embed_centered<T: Scalar>(
    v: &SpectrumPrompt<T>,
    height: usize,
    width: usize,
) -> Result<ComplexGrid<T>> {
    Ok(fftshift(&embed_prompt(v, height, width)?, false))
}

/// `x + Re(ifft2(embed(v)))`.
pub fn apply_complex<T: Scalar>(x: &RealGrid<T>, v: &SpectrumPrompt<T>) -> Result<RealGrid<T>> {
    if v.variant != FvpVariant::Complex {
        return Err(Error::invalid("apply_complex needs the complex variant"));
    }
    v.check_image(x)?;
    x.add(&v.spatial_pattern(x.height(), x.width())?)
}

/// Adds the prompt to the amplitude or phase of `fft2(x)` and transforms back.
pub fn apply_real<T: Scalar>(x: &RealGrid<T>, v: &SpectrumPrompt<T>) -> Result<RealGrid<T>> {
    if v.variant == FvpVariant::Complex {
        return Err(Error::invalid("apply_real needs the amplitude or phase variant"));
    }
    Ok(v.apply_real_one(x)?.0)
}

impl<T: Scalar> VisualPrompt<T> for SpectrumPrompt<T> {
    fn num_learnable(&self) -> usize {
        match self.variant {
            FvpVariant::Complex => 2 * self.block(),
            _ => self.block(),
        }
    }

    fn learnable(&self) -> &[T] {
        &self.coeffs[..self.num_learnable()]
    }

    fn learnable_mut(&mut self) -> &mut [T] {
        let n = self.num_learnable();
        &mut self.coeffs[..n]
    }

    fn apply_batch(&self, images: &[RealGrid<T>]) -> Result<PromptedBatch<T>> {
        let Some(first) = images.first() else {
            return Ok(PromptedBatch {
                images: Vec::new(),
                spectra: Vec::new(),
            });
        };
        if self.variant == FvpVariant::Complex {
            self.check_image(first)?;
            let pattern = self.spatial_pattern(first.height(), first.width())?;
            let images = images
                .iter()
                .map(|x| x.add(&pattern))
                .collect::<Result<Vec<_>>>()?;
            Ok(PromptedBatch {
                images,
                spectra: Vec::new(),
            })
        } else {
            let (images, spectra) = images
                .iter()
                .map(|x| self.apply_real_one(x))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip();
            Ok(PromptedBatch { images, spectra })
        }
    }

    fn backward_batch(
        &self,
        batch: &PromptedBatch<T>,
        grads: &[RealGrid<T>],
    ) -> Result<PromptGradient<T>> {
        if grads.len() != batch.images.len() {
            return Err(Error::shape("gradient count != batch size"));
        }
        let Some(first) = grads.first() else {
            return Ok(PromptGradient::zeros(self.num_learnable()));
        };
        if self.variant == FvpVariant::Complex {
            let mut total = RealGrid::zeros(first.height(), first.width(), first.channels());
            for g in grads {
                total = total.add(g)?;
            }
            return self.backward_complex(&total);
        }
        if batch.spectra.len() != grads.len() {
            return Err(Error::invalid("batch was not produced by a real-variant prompt"));
        }
        let mut acc = PromptGradient::zeros(self.num_learnable());
        for (src, g) in batch.spectra.iter().zip(grads) {
            let gi = self.backward_real(src, g)?;
            for (a, b) in acc.values.iter_mut().zip(gi.values) {
                *a += b;
            }
        }
        Ok(acc)
    }

    fn remove_constant_mode(&self, grad: &mut PromptGradient<T>) {
        let (di, dj) = self.dc_cell();
        let blocks = grad.values.len() / self.block();
        let cn = T::lit(self.channels as f64);
        for b in 0..blocks {
            let idx: Vec<usize> = (0..self.channels)
                .map(|c| b * self.block() + self.param_index(di, dj, c))
                .collect();
            let mean = idx.iter().map(|&i| grad.values[i]).sum::<T>() / cn;
            for i in idx {
                grad.values[i] = if self.channels == 1 {
                    T::zero()
                } else {
                    grad.values[i] - mean
                };
            }
        }
    }
}
