//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-parameter Adam state: first/second moment estimates and step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Tensor,
    v: Tensor,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state for a parameter of the given shape, with the
    /// conventional defaults (0.9, 0.999, 1e-8).
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update: `p -= lr·m̂/(√v̂ + ε)` with bias-corrected moments.
///
/// Deterministic: identical inputs produce bit-identical outputs. A
/// non-finite gradient aborts before any state is touched; the returned
/// error names the offending element (the caller attaches the parameter
/// name).
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState, lr: f64) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.m.shape() {
        return Err(Error::shape(
            "adam_step",
            format!("{:?}", param.shape()),
            format!("grad {:?}, state {:?}", grad.shape(), state.m.shape()),
        ));
    }
    if lr <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if let Some(i) = grad.first_non_finite() {
        return Err(Error::NonFiniteGradient {
            parameter: String::new(),
            index: i,
        });
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);

    let p = param.data_mut();
    let g = grad.data();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_param_unchanged() {
        let mut p = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::zeros(&[3]);
        let mut st = AdamState::new(&[3]);
        let before = p.clone();
        adam_step(&mut p, &g, &mut st, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // With constant grad = 1 at step 1, m̂/√v̂ = 1, so the update is
        // lr/(1 + ε) up to the epsilon term.
        let lr = 0.05;
        let mut p = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        let g = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let mut st = AdamState::new(&[1]);
        adam_step(&mut p, &g, &mut st, lr).unwrap();
        let update = 2.0 - p.data()[0];
        assert!((update - lr).abs() < lr * 1e-7, "update {update} vs lr {lr}");
    }

    #[test]
    fn descends_quadratic() {
        // 10 steps on f(p) = p² from p = 1 strictly decreases f.
        let mut p = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let mut st = AdamState::new(&[1]);
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let grad = Tensor::from_vec(&[1], vec![2.0 * p.data()[0]]).unwrap();
            adam_step(&mut p, &grad, &mut st, 0.05).unwrap();
            let f = p.data()[0] * p.data()[0];
            assert!(f < prev, "f did not decrease: {f} >= {prev}");
            prev = f;
        }
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::from_vec(&[2], vec![0.0, f64::NAN]).unwrap();
        let mut st = AdamState::new(&[2]);
        let err = adam_step(&mut p, &g, &mut st, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 1, .. }));
        // State untouched on error.
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut p = Tensor::from_vec(&[2], vec![0.3, -0.7]).unwrap();
            let mut st = AdamState::new(&[2]);
            for k in 0..20 {
                let g =
                    Tensor::from_vec(&[2], vec![(k as f64).sin(), (k as f64).cos()]).unwrap();
                adam_step(&mut p, &g, &mut st, 1e-3).unwrap();
            }
            p.data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "bitwise determinism violated");
    }
}
