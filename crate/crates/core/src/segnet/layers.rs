//! Kernels on single-image activations stored channel-major (`c, y, x`).

use crate::scalar::Scalar;

/// Spatial shape of a channel-major activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }
}

pub(crate) const KSIZE: usize = 3;

/// Output size of a 3x3 convolution with padding 1.
pub(crate) fn conv_out(n: usize, stride: usize) -> usize {
    (n + 2 - KSIZE) / stride + 1
}

/// Unfolds 3x3 patches (zero padding 1) into a `(cin * 9) x (hout * wout)`
/// matrix.
pub(crate) fn im2col<T: Scalar>(x: &[T], d: Dims, stride: usize) -> (Vec<T>, usize, usize) {
    let (ho, wo) = (conv_out(d.h, stride), conv_out(d.w, stride));
    let p = ho * wo;
    let mut cols = vec![T::zero(); d.c * KSIZE * KSIZE * p];
    for ci in 0..d.c {
        let plane = &x[ci * d.plane()..(ci + 1) * d.plane()];
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let row = ((ci * KSIZE + ky) * KSIZE + kx) * p;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    for (ox, out) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < d.w as isize {
                            *out = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub(crate) fn col2im<T: Scalar>(cols: &[T], d: Dims, stride: usize) -> Vec<T> {
    let (ho, wo) = (conv_out(d.h, stride), conv_out(d.w, stride));
    let p = ho * wo;
    let mut x = vec![T::zero(); d.len()];
    for ci in 0..d.c {
        let plane = &mut x[ci * d.plane()..(ci + 1) * d.plane()];
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let row = ((ci * KSIZE + ky) * KSIZE + kx) * p;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let base = iy as usize * d.w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < d.w as isize {
                            plane[base + ix as usize] += cols[row + oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// `out[cout, P] = weight[cout, cin*9] x cols[cin*9, P]`.
pub(crate) fn conv_forward<T: Scalar>(weight: &[T], cout: usize, cols: &[T], k: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cout * p];
    T::gemm(cout, k, p, T::one(), weight, (k, 1), cols, (p, 1), T::zero(), &mut out, (p, 1));
    out
}

/// `dcols[cin*9, P] = weight^T x dout`.
pub(crate) fn conv_backward_cols<T: Scalar>(weight: &[T], cout: usize, dout: &[T], k: usize, p: usize) -> Vec<T> {
    let mut dcols = vec![T::zero(); k * p];
    T::gemm(k, cout, p, T::one(), weight, (1, k), dout, (p, 1), T::zero(), &mut dcols, (p, 1));
    dcols
}

/// `dweight[cout, cin*9] += dout x cols^T`.
pub(crate) fn conv_backward_weight<T: Scalar>(
    dweight: &mut [T],
    cout: usize,
    dout: &[T],
    cols: &[T],
    k: usize,
    p: usize,
) {
    T::gemm(cout, p, k, T::one(), dout, (p, 1), cols, (1, p), T::one(), dweight, (k, 1));
}

/// Source taps and weights of 1D linear interpolation from `n_in` to `n_out`
/// samples with half-pixel centers.
pub(crate) fn interp_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let t = src - i0 as f64;
            (i0, i1, 1.0 - t, t)
        })
        .collect()
}

/// Bilinear resize of every channel plane from `d` to `h_out x w_out`.
pub(crate) fn bilinear<T: Scalar>(x: &[T], d: Dims, h_out: usize, w_out: usize) -> Vec<T> {
    let rows = interp_taps(d.h, h_out);
    let cols = interp_taps(d.w, w_out);
    let mut out = vec![T::zero(); d.c * h_out * w_out];
    for c in 0..d.c {
        let plane = &x[c * d.plane()..(c + 1) * d.plane()];
        let dst = &mut out[c * h_out * w_out..(c + 1) * h_out * w_out];
        for (y, &(y0, y1, wy0, wy1)) in rows.iter().enumerate() {
            let (wy0, wy1) = (T::lit(wy0), T::lit(wy1));
            for (xx, &(x0, x1, wx0, wx1)) in cols.iter().enumerate() {
                let (wx0, wx1) = (T::lit(wx0), T::lit(wx1));
                dst[y * w_out + xx] = wy0 * (wx0 * plane[y0 * d.w + x0] + wx1 * plane[y0 * d.w + x1])
                    + wy1 * (wx0 * plane[y1 * d.w + x0] + wx1 * plane[y1 * d.w + x1]);
            }
        }
    }
    out
}

/// Adjoint of [`bilinear`].
pub(crate) fn bilinear_adjoint<T: Scalar>(g: &[T], d: Dims, h_out: usize, w_out: usize) -> Vec<T> {
    let rows = interp_taps(d.h, h_out);
    let cols = interp_taps(d.w, w_out);
    let mut out = vec![T::zero(); d.len()];
    for c in 0..d.c {
        let src = &g[c * h_out * w_out..(c + 1) * h_out * w_out];
        let plane = &mut out[c * d.plane()..(c + 1) * d.plane()];
        for (y, &(y0, y1, wy0, wy1)) in rows.iter().enumerate() {
            let (wy0, wy1) = (T::lit(wy0), T::lit(wy1));
            for (xx, &(x0, x1, wx0, wx1)) in cols.iter().enumerate() {
                let (wx0, wx1) = (T::lit(wx0), T::lit(wx1));
                let v = src[y * w_out + xx];
                plane[y0 * d.w + x0] += wy0 * wx0 * v;
                plane[y0 * d.w + x1] += wy0 * wx1 * v;
                plane[y1 * d.w + x0] += wy1 * wx0 * v;
                plane[y1 * d.w + x1] += wy1 * wx1 * v;
            }
        }
    }
    out
}

/// Numerically stable softmax over one pixel's logits.
pub(crate) fn softmax_into<T: Scalar>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}
