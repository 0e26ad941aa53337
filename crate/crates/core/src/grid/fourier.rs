use std::cell::Cell;
use std::f64::consts::PI;

use num_complex::Complex;

use super::{AmpPhase, ComplexGrid, RealGrid};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

thread_local! {
    static TRANSFORMS: Cell<usize> = const { Cell::new(0) };
}

/// Number of 2D transforms (forward or inverse) run on this thread since the
/// last [`reset_transform_count`].
pub fn transform_count() -> usize {
    TRANSFORMS.with(|c| c.get())
}

pub fn reset_transform_count() {
    TRANSFORMS.with(|c| c.set(0));
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => -1.0,
            Direction::Inverse => 1.0,
        }
    }
}

/// `exp(sign * 2 pi i k / n)` for `k in 0..count`, evaluated in f64.
fn roots<T: Scalar>(n: usize, count: usize, dir: Direction) -> Vec<Complex<T>> {
    (0..count)
        .map(|k| {
            let theta = dir.sign() * 2.0 * PI * (k as f64) / (n as f64);
            Complex::new(T::lit(theta.cos()), T::lit(theta.sin()))
        })
        .collect()
}

/// 1D transform plan for one axis length.
struct Plan<T> {
    n: usize,
    radix2: bool,
    roots: Vec<Complex<T>>,
    scratch: Vec<Complex<T>>,
}

impl<T: Scalar> Plan<T> {
    fn new(n: usize, dir: Direction, force_direct: bool) -> Self {
        let radix2 = n.is_power_of_two() && !force_direct;
        let roots = if radix2 {
            roots(n, n / 2, dir)
        } else {
            roots(n, n, dir)
        };
        Self {
            n,
            radix2,
            roots,
            scratch: vec![Complex::default(); n],
        }
    }

    fn run(&mut self, buf: &mut [Complex<T>]) {
        debug_assert_eq!(buf.len(), self.n);
        if self.n <= 1 {
            return;
        }
        if self.radix2 {
            self.radix2_in_place(buf);
        } else {
            self.direct(buf);
        }
    }

    fn radix2_in_place(&self, buf: &mut [Complex<T>]) {
        let n = self.n;
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for j in 0..half {
                    let w = self.roots[j * stride];
                    let u = buf[start + j];
                    let v = buf[start + j + half] * w;
                    buf[start + j] = u + v;
                    buf[start + j + half] = u - v;
                }
            }
            len <<= 1;
        }
    }

    fn direct(&mut self, buf: &mut [Complex<T>]) {
        let n = self.n;
        for k in 0..n {
            let mut acc = Complex::default();
            for (m, x) in buf.iter().enumerate() {
                acc = acc + *x * self.roots[(k * m) % n];
            }
            self.scratch[k] = acc;
        }
        buf.copy_from_slice(&self.scratch);
    }
}

fn transform2<T: Scalar>(
    z: &ComplexGrid<T>,
    dir: Direction,
    force_direct: bool,
) -> Result<ComplexGrid<T>> {
    let (h, w, ch) = z.shape();
    if h == 0 || w == 0 {
        return Err(Error::shape("transform of an empty grid"));
    }
    z.check_finite("transform input")?;
    let mut out = z.clone();
    let data = out.data_mut();
    let mut row_plan = Plan::new(w, dir, force_direct);
    let mut col_plan = Plan::new(h, dir, force_direct);
    let mut row = vec![Complex::default(); w];
    let mut col = vec![Complex::default(); h];
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                row[x] = data[(y * w + x) * ch + c];
            }
            row_plan.run(&mut row);
            for x in 0..w {
                data[(y * w + x) * ch + c] = row[x];
            }
        }
        for x in 0..w {
            for y in 0..h {
                col[y] = data[(y * w + x) * ch + c];
            }
            col_plan.run(&mut col);
            for y in 0..h {
                data[(y * w + x) * ch + c] = col[y];
            }
        }
    }
    if dir == Direction::Inverse {
        let norm = T::one() / T::lit((h * w) as f64);
        for v in data.iter_mut() {
            *v = *v * norm;
        }
    }
    TRANSFORMS.with(|c| c.set(c.get() + 1));
    Ok(out)
}

/// Unnormalized forward 2D DFT of every channel plane. Power-of-two axes use
/// radix-2 butterflies; other lengths fall back to a direct DFT.
pub fn fft2<T: Scalar>(z: &ComplexGrid<T>) -> Result<ComplexGrid<T>> {
    transform2(z, Direction::Forward, false)
}

pub fn fft2_real<T: Scalar>(x: &RealGrid<T>) -> Result<ComplexGrid<T>> {
    x.check_finite("transform input")?;
    fft2(&x.to_complex())
}

/// Inverse 2D DFT carrying the `1 / (H W)` normalization.
pub fn ifft2<T: Scalar>(z: &ComplexGrid<T>) -> Result<ComplexGrid<T>> {
    transform2(z, Direction::Inverse, false)
}

/// Separable direct DFT, bypassing the radix-2 path regardless of size.
pub fn dft2_direct<T: Scalar>(z: &ComplexGrid<T>, inverse: bool) -> Result<ComplexGrid<T>> {
    let dir = if inverse {
        Direction::Inverse
    } else {
        Direction::Forward
    };
    transform2(z, dir, true)
}

/// Moves the zero-frequency bin from `(0, 0)` to `(H/2, W/2)` (floor), or back
/// when `inverse` is set.
pub fn fftshift<T: Scalar>(z: &ComplexGrid<T>, inverse: bool) -> ComplexGrid<T> {
    let (h, w, ch) = z.shape();
    let (dh, dw) = (h / 2, w / 2);
    let mut out = ComplexGrid::zeros(h, w, ch);
    for y in 0..h {
        for x in 0..w {
            let (src, dst) = if inverse {
                (((y + dh) % h, (x + dw) % w), (y, x))
            } else {
                ((y, x), ((y + dh) % h, (x + dw) % w))
            };
            for c in 0..ch {
                out.set(dst.0, dst.1, c, z.get(src.0, src.1, c));
            }
        }
    }
    out
}

/// Modulus and argument of every bin. The argument of zero is 0 and `-pi` is
/// folded onto `pi`.
pub fn amp_phase_split<T: Scalar>(z: &ComplexGrid<T>) -> AmpPhase<T> {
    let (h, w, ch) = z.shape();
    let mut amplitude = Vec::with_capacity(z.len());
    let mut phase = Vec::with_capacity(z.len());
    for v in z.data() {
        amplitude.push(v.norm());
        let phi = if v.re == T::zero() && v.im == T::zero() {
            T::zero()
        } else {
            let a = v.im.atan2(v.re);
            if a <= -T::PI() {
                T::PI()
            } else {
                a
            }
        };
        phase.push(phi);
    }
    AmpPhase {
        amplitude: RealGrid {
            height: h,
            width: w,
            channels: ch,
            data: amplitude,
        },
        phase: RealGrid {
            height: h,
            width: w,
            channels: ch,
            data: phase,
        },
    }
}

/// `A * exp(i phi)` elementwise.
pub fn amp_phase_merge<T: Scalar>(ap: &AmpPhase<T>) -> Result<ComplexGrid<T>> {
    ap.amplitude.ensure_shape(ap.phase.shape(), "amplitude/phase")?;
    let (h, w, ch) = ap.amplitude.shape();
    let data = ap
        .amplitude
        .data()
        .iter()
        .zip(ap.phase.data())
        .map(|(&a, &p)| Complex::from_polar(a, p))
        .collect();
    Ok(ComplexGrid {
        height: h,
        width: w,
        channels: ch,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_real(h: usize, w: usize, c: usize, seed: u64) -> RealGrid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealGrid::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0..1.0))
    }

    fn random_complex(h: usize, w: usize, seed: u64) -> ComplexGrid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w)
            .map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        ComplexGrid::from_vec(h, w, 1, data).unwrap()
    }

    /// Quadruple-loop DFT straight from the definition.
    fn naive_dft(z: &ComplexGrid<f64>, inverse: bool) -> ComplexGrid<f64> {
        let (h, w, ch) = z.shape();
        let sign = if inverse { 1.0 } else { -1.0 };
        let mut out = ComplexGrid::zeros(h, w, ch);
        for c in 0..ch {
            for u in 0..h {
                for q in 0..w {
                    let mut acc = Complex::new(0.0, 0.0);
                    for y in 0..h {
                        for x in 0..w {
                            let theta = sign
                                * 2.0
                                * PI
                                * ((u * y) as f64 / h as f64 + (q * x) as f64 / w as f64);
                            acc += z.get(y, x, c) * Complex::new(theta.cos(), theta.sin());
                        }
                    }
                    if inverse {
                        acc /= (h * w) as f64;
                    }
                    out.set(u, q, c, acc);
                }
            }
        }
        out
    }

    #[test]
    fn constant_grid_has_only_dc() {
        let x = RealGrid::from_vec(2, 2, 1, vec![1.0; 4]).unwrap();
        let f = fft2_real(&x).unwrap();
        assert_eq!(f.get(0, 0, 0), Complex::new(4.0, 0.0));
        for (i, v) in f.data().iter().enumerate().skip(1) {
            assert!(v.norm() < 1e-15, "bin {i} = {v}");
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut x = RealGrid::<f64>::zeros(4, 4, 1);
        x.set(0, 0, 0, 1.0);
        let f = fft2_real(&x).unwrap();
        for v in f.data() {
            assert!((v - Complex::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn forward_matches_naive_oracle_8x8() {
        let x = random_real(8, 8, 1, 3).to_complex();
        let got = fft2(&x).unwrap();
        assert!(got.max_abs_diff(&naive_dft(&x, false)) < 1e-10);
    }

    #[test]
    fn inverse_of_dc_spectrum_is_constant() {
        let mut z = ComplexGrid::<f64>::zeros(4, 8, 1);
        z.set(0, 0, 0, Complex::new(32.0, 0.0));
        let x = ifft2(&z).unwrap();
        for v in x.data() {
            assert!((v - Complex::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn roundtrip_16x16() {
        let x = random_real(16, 16, 2, 9);
        let back = ifft2(&fft2_real(&x).unwrap()).unwrap();
        assert!(back.re().max_abs_diff(&x) < 1e-10);
        assert!(back.im().data().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn inverse_matches_naive_oracle_8x8() {
        let z = random_complex(8, 8, 4);
        assert!(ifft2(&z).unwrap().max_abs_diff(&naive_dft(&z, true)) < 1e-10);
    }

    #[test]
    fn non_power_of_two_uses_direct_path() {
        let z = random_complex(6, 5, 8);
        assert!(fft2(&z).unwrap().max_abs_diff(&naive_dft(&z, false)) < 1e-10);
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut z = ComplexGrid::<f64>::zeros(4, 4, 1);
        z.data_mut()[3] = Complex::new(f64::INFINITY, 0.0);
        assert!(matches!(fft2(&z), Err(Error::NonFinite(_))));
        assert!(matches!(ifft2(&z), Err(Error::NonFinite(_))));
    }

    #[test]
    fn shift_moves_dc_to_center() {
        let mut z = ComplexGrid::<f64>::zeros(4, 4, 1);
        z.set(0, 0, 0, Complex::new(1.0, 0.0));
        let s = fftshift(&z, false);
        assert_eq!(s.get(2, 2, 0), Complex::new(1.0, 0.0));
        assert_eq!(fftshift(&s, false), z);
    }

    #[test]
    fn shift_odd_matches_permutation_oracle() {
        let z = random_complex(5, 5, 1);
        let s = fftshift(&z, false);
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(s.get((y + 2) % 5, (x + 2) % 5, 0), z.get(y, x, 0));
            }
        }
        assert_eq!(fftshift(&s, true), z);
    }

    #[test]
    fn split_conventions() {
        let z = ComplexGrid::from_vec(
            1,
            4,
            1,
            vec![
                Complex::new(0.0, 1.0),
                Complex::new(0.0, 0.0),
                Complex::new(-1.0, -0.0),
                Complex::new(2.5, 0.0),
            ],
        )
        .unwrap();
        let ap = amp_phase_split(&z);
        assert_eq!(ap.amplitude.data()[0], 1.0);
        assert!((ap.phase.data()[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(ap.phase.data()[1], 0.0);
        assert_eq!(ap.phase.data()[2], std::f64::consts::PI);
        assert_eq!(ap.phase.data()[3], 0.0);
    }

    #[test]
    fn split_merge_roundtrip() {
        let z = random_complex(8, 8, 12);
        let ap = amp_phase_split(&z);
        for (i, v) in z.data().iter().enumerate() {
            assert!((ap.amplitude.data()[i] - v.norm()).abs() < 1e-15);
            assert!((ap.phase.data()[i] - v.im.atan2(v.re)).abs() < 1e-15);
        }
        assert!(amp_phase_merge(&ap).unwrap().max_abs_diff(&z) < 1e-10);
    }

    #[test]
    fn counter_counts_transforms() {
        reset_transform_count();
        let z = random_complex(4, 4, 0);
        let _ = fft2(&z).unwrap();
        let _ = ifft2(&z).unwrap();
        assert_eq!(transform_count(), 2);
    }
}
