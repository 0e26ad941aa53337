use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam with bias correction. Weight decay is an L2 term added to the
/// gradient before the moment updates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            step: 0,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: T, weight_decay: T) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam state for {} parameters got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i] + weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (T::one() - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (T::one() - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_sign_sized() {
        let mut s = AdamState::<f64>::new(1);
        let mut w = [1.0];
        s.step(&mut w, &[2.0], 0.1, 0.0).unwrap();
        let update = w[0] - 1.0;
        assert!((update + 0.1).abs() < 0.1 * 1e-8 + 1e-15, "{update}");
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut s = AdamState::<f64>::new(3);
        let mut w = [1.0, -2.0, 0.5];
        for _ in 0..5 {
            s.step(&mut w, &[0.0; 3], 0.1, 0.0).unwrap();
        }
        assert_eq!(w, [1.0, -2.0, 0.5]);
    }

    /// Hand-unrolled Adam on f(w) = w^2 written without the state type.
    #[test]
    fn quadratic_trace_matches_reference() {
        let (lr, wd) = (0.05f64, 1e-5f64);
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let mut w_ref = 3.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut trace = Vec::new();
        for t in 1..=10 {
            let g = 2.0 * w_ref + wd * w_ref;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w_ref -= lr * mh / (vh.sqrt() + eps);
            trace.push(w_ref);
        }
        let mut s = AdamState::<f64>::new(1);
        let mut w = [3.0];
        for want in trace {
            let g = [2.0 * w[0]];
            s.step(&mut w, &g, lr, wd).unwrap();
            assert!((w[0] - want).abs() < 1e-12);
        }
        assert_eq!(s.steps(), 10);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = AdamState::<f64>::new(2);
        assert!(s.step(&mut [0.0; 3], &[0.0; 3], 0.1, 0.0).is_err());
    }
}
