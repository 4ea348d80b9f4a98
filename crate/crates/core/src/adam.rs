//! Bias-corrected Adam shared by the feature grids and the dense layers.

use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    /// Number of completed steps for the parameter group this struct drives.
    pub step_count: u64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-15,
            learning_rate: 0.005,
            step_count: 0,
        }
    }
}

impl AdamParams {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    /// Advances the step counter and returns the bias corrections
    /// `(1 - beta1^t, 1 - beta2^t)` for the new step.
    pub(crate) fn advance(&mut self) -> (f64, f64) {
        self.step_count += 1;
        let t = self.step_count as i32;
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }
}

/// One Adam update over a flat parameter buffer. Gradients are zeroed.
pub(crate) fn adam_update<T: Real>(
    params: &mut [T],
    grads: &mut [T],
    m: &mut [T],
    v: &mut [T],
    hp: &AdamParams,
    corrections: (f64, f64),
) {
    debug_assert!(params.len() == grads.len() && m.len() == params.len() && v.len() == params.len());
    let b1 = T::from_f64_lossy(hp.beta1);
    let b2 = T::from_f64_lossy(hp.beta2);
    let one = T::one();
    let lr = T::from_f64_lossy(hp.learning_rate);
    let eps = T::from_f64_lossy(hp.epsilon);
    let c1 = T::from_f64_lossy(corrections.0);
    let c2 = T::from_f64_lossy(corrections.1);
    for (((p, g), m), v) in params.iter_mut().zip(grads.iter_mut()).zip(m.iter_mut()).zip(v.iter_mut()) {
        let grad = *g;
        *m = b1 * *m + (one - b1) * grad;
        *v = b2 * *v + (one - b2) * grad * grad;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        *g = T::zero();
    }
}
