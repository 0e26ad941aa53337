use crate::grid::RealGrid;
use crate::scalar::Scalar;

/// Variance floor that keeps constant images finite.
pub const STANDARDIZE_EPS: f64 = 1e-8;

/// Saved state of a [`standardize`] call, enough to run its backward pass.
#[derive(Clone, Debug)]
pub struct StandardizeTape<T> {
    output: RealGrid<T>,
    inv_std: T,
}

impl<T: Scalar> StandardizeTape<T> {
    /// Maps `dL/dout` to `dL/din` exactly, including the dependence of the
    /// mean and variance on every input value.
    pub fn backward(&self, grad_out: &RealGrid<T>) -> RealGrid<T> {
        let n = T::lit(grad_out.len() as f64);
        let s = self.inv_std;
        let g = grad_out.data();
        let y = self.output.data();
        let g_mean = g.iter().copied().sum::<T>() / n;
        // sum(g * d) / (n s^3) with d = y / s
        let gd = g.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>() / s;
        let coef = gd * s * s * s / n;
        let data = g
            .iter()
            .zip(y)
            .map(|(&gi, &yi)| (gi - g_mean) * s - (yi / s) * coef)
            .collect();
        grad_out.with_data(data)
    }

    pub fn output(&self) -> &RealGrid<T> {
        &self.output
    }
}

/// `(x - mean) / sqrt(var + eps)` over all `H * W * C` values.
pub fn standardize<T: Scalar>(x: &RealGrid<T>) -> (RealGrid<T>, StandardizeTape<T>) {
    let n = T::lit(x.len().max(1) as f64);
    let mean = x.data().iter().copied().sum::<T>() / n;
    let var = x.data().iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv_std = T::one() / (var + T::lit(STANDARDIZE_EPS)).sqrt();
    let out = x.map(|v| (v - mean) * inv_std);
    let tape = StandardizeTape {
        output: out.clone(),
        inv_std,
    };
    (out, tape)
}

/// Model input for an unprompted image: standardized twice, the same
/// treatment a prompted image receives with a zero prompt.
pub fn preprocess<T: Scalar>(x: &RealGrid<T>) -> RealGrid<T> {
    standardize(&standardize(x).0).0
}
