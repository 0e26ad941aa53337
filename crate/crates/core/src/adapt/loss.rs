//! Selection-masked cross entropy on reliable pseudo labels.

use crate::error::{Error, Result};
use crate::grid::RealGrid;
use crate::pseudo::ReliableLabel;
use crate::scalar::Scalar;

/// Probability floor inside the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Cross entropy of one image summed over selected pixels, and its exact
/// gradient w.r.t. the logits (`p - y` on selected pixels, zero elsewhere).
pub fn seg_loss<T: Scalar>(probs: &RealGrid<T>, label: &ReliableLabel) -> Result<(T, RealGrid<T>)> {
    let (h, w, nc) = probs.shape();
    if (h, w, nc) != (label.height(), label.width(), label.n_classes()) {
        return Err(Error::shape("probabilities and reliable label differ"));
    }
    let floor = T::lit(LOG_FLOOR);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); probs.len()];
    let p = probs.data();
    for (i, (&y, &t)) in label.labels().iter().zip(label.selected()).enumerate() {
        if !t {
            continue;
        }
        let row = i * nc;
        let py = p[row + y as usize];
        loss -= py.max(floor).ln();
        // below the floor the clamped loss is flat
        if py >= floor {
            grad[row..row + nc].copy_from_slice(&p[row..row + nc]);
            grad[row + y as usize] -= T::one();
        }
    }
    Ok((loss, probs.with_data(grad)))
}
