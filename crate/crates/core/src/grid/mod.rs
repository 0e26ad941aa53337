//! Dense H x W x C grids stored row-major in `(h, w, c)` order, plus the
//! Fourier core that operates on them.

mod fourier;

pub use fourier::{
    amp_phase_merge, amp_phase_split, dft2_direct, fft2, fft2_real, fftshift, ifft2,
    reset_transform_count, transform_count,
};

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Real-valued image or feature grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RealGrid<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

/// Complex-valued grid, used for spectra.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<Complex<T>>,
}

/// Polar decomposition of a spectrum. Amplitude is non-negative, phase lies
/// in `(-pi, pi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AmpPhase<T> {
    pub amplitude: RealGrid<T>,
    pub phase: RealGrid<T>,
}

/// Per-pixel class ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelGrid {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

macro_rules! grid_common {
    ($name:ident, $elem:ty) => {
        impl<T: Scalar> $name<T> {
            pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
                Self {
                    height,
                    width,
                    channels,
                    data: vec![<$elem>::default(); height * width * channels],
                }
            }

            #[inline]
            pub fn height(&self) -> usize {
                self.height
            }

            #[inline]
            pub fn width(&self) -> usize {
                self.width
            }

            #[inline]
            pub fn channels(&self) -> usize {
                self.channels
            }

            #[inline]
            pub fn shape(&self) -> (usize, usize, usize) {
                (self.height, self.width, self.channels)
            }

            #[inline]
            pub fn len(&self) -> usize {
                self.data.len()
            }

            #[inline]
            pub fn is_empty(&self) -> bool {
                self.data.is_empty()
            }

            #[inline]
            pub fn index(&self, h: usize, w: usize, c: usize) -> usize {
                debug_assert!(h < self.height && w < self.width && c < self.channels);
                (h * self.width + w) * self.channels + c
            }

            #[inline]
            pub fn get(&self, h: usize, w: usize, c: usize) -> $elem {
                self.data[self.index(h, w, c)]
            }

            #[inline]
            pub fn set(&mut self, h: usize, w: usize, c: usize, v: $elem) {
                let i = self.index(h, w, c);
                self.data[i] = v;
            }

            #[inline]
            pub fn data(&self) -> &[$elem] {
                &self.data
            }

            #[inline]
            pub fn data_mut(&mut self) -> &mut [$elem] {
                &mut self.data
            }

            pub fn into_data(self) -> Vec<$elem> {
                self.data
            }

            pub fn same_shape<U>(&self, other: &(impl HasShape<U> + ?Sized)) -> bool {
                self.shape() == other.grid_shape()
            }

            pub fn ensure_shape(&self, shape: (usize, usize, usize), what: &str) -> Result<()> {
                if self.shape() != shape {
                    return Err(Error::shape(format!(
                        "{what}: expected {:?}, got {:?}",
                        shape,
                        self.shape()
                    )));
                }
                Ok(())
            }
        }

        impl<T: Scalar> HasShape<T> for $name<T> {
            fn grid_shape(&self) -> (usize, usize, usize) {
                self.shape()
            }
        }
    };
}

/// Anything with an `(H, W, C)` shape.
pub trait HasShape<T> {
    fn grid_shape(&self) -> (usize, usize, usize);
}

grid_common!(RealGrid, T);
grid_common!(ComplexGrid, Complex<T>);

impl<T: Scalar> RealGrid<T> {
    /// Wraps `data`, checking the length and that every value is finite.
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        let grid = Self {
            height,
            width,
            channels,
            data,
        };
        grid.check_finite("real grid")?;
        Ok(grid)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for h in 0..height {
            for w in 0..width {
                for c in 0..channels {
                    data.push(f(h, w, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise sum; shapes must agree.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.ensure_shape(other.shape(), "add")?;
        Ok(self.with_data(self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect()))
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn to_complex(&self) -> ComplexGrid<T> {
        ComplexGrid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| Complex::new(v, T::zero())).collect(),
        }
    }

    /// Converts the element type through `f64`.
    pub fn cast<U: Scalar>(&self) -> RealGrid<U> {
        RealGrid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    /// Same shape, new contents. `data` must have the same length.
    pub fn with_data(&self, data: Vec<T>) -> Self {
        assert_eq!(data.len(), self.data.len(), "with_data: length mismatch");
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }
}

impl<T: Scalar> ComplexGrid<T> {
    pub fn from_vec(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<Complex<T>>,
    ) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        let grid = Self {
            height,
            width,
            channels,
            data,
        };
        grid.check_finite("complex grid")?;
        Ok(grid)
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn re(&self) -> RealGrid<T> {
        RealGrid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|z| z.re).collect(),
        }
    }

    pub fn im(&self) -> RealGrid<T> {
        RealGrid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|z| z.im).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.ensure_shape(other.shape(), "add")?;
        Ok(Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((a - b).norm()))
    }
}

impl LabelGrid {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "label length {} != {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> u8 {
        self.data[h * self.width + w]
    }

    #[inline]
    pub fn set(&mut self, h: usize, w: usize, v: u8) {
        self.data[h * self.width + w] = v;
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn max_label(&self) -> Option<u8> {
        self.data.iter().copied().max()
    }

    /// Binary mask of pixels equal to `class`.
    pub fn mask(&self, class: u8) -> Vec<bool> {
        self.data.iter().map(|&v| v == class).collect()
    }

    /// Per-pixel argmax over the channels of a probability grid; ties go to
    /// the lowest class index.
    pub fn argmax<T: Scalar>(probs: &RealGrid<T>) -> Self {
        let nc = probs.channels();
        let data = probs
            .data()
            .chunks_exact(nc)
            .map(|row| argmax_lowest(row) as u8)
            .collect();
        Self {
            height: probs.height(),
            width: probs.width(),
            data,
        }
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax_lowest<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length_and_nan() {
        assert!(RealGrid::<f64>::from_vec(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(matches!(
            RealGrid::<f64>::from_vec(1, 2, 1, vec![0.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn index_is_row_major_hwc() {
        let g = RealGrid::<f64>::from_fn(2, 3, 2, |h, w, c| (100 * h + 10 * w + c) as f64);
        assert_eq!(g.data()[g.index(1, 2, 1)], 121.0);
        assert_eq!(g.index(1, 0, 0), 6);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_lowest(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax_lowest(&[0.1, 0.4, 0.4]), 1);
    }
}
