//! Adam optimizer with per-parameter state.

use super::{real, Real, Tensor};
use crate::error::{Error, Result};

/// Optimizer state for one parameter tensor: step counter, first and second
/// moment estimates, and the hyperparameters driving the update.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real = f32> {
    pub step_count: u64,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> AdamState<T> {
    /// State for a parameter with `numel` elements at learning rate `lr`,
    /// with the conventional defaults `beta1 = 0.9`, `beta2 = 0.999`,
    /// `eps = 1e-8`.
    pub fn new(numel: usize, lr: T) -> Self {
        Self::with_hyper(numel, lr, real(0.9), real(0.999), real(1e-8))
    }

    pub fn with_hyper(numel: usize, lr: T, beta1: T, beta2: T, eps: T) -> Self {
        AdamState {
            step_count: 0,
            lr,
            beta1,
            beta2,
            eps,
            m: vec![T::zero(); numel],
            v: vec![T::zero(); numel],
        }
    }

    /// Number of elements this state is sized for.
    pub fn numel(&self) -> usize {
        self.m.len()
    }
}

/// Apply one bias-corrected Adam update to `param` in place and clear its
/// gradient. Fails if no gradient has been accumulated or if the state was
/// sized for a different parameter.
pub fn adam_step<T: Real>(param: &Tensor<T>, state: &mut AdamState<T>) -> Result<()> {
    let Some(grad) = param.grad() else {
        return Err(Error::OptimizerState(
            "adam_step on a parameter with no accumulated gradient".into(),
        ));
    };
    let mut data = param.data();
    if state.m.len() != data.len() {
        return Err(Error::OptimizerState(format!(
            "optimizer state sized for {} elements, parameter has {}",
            state.m.len(),
            data.len()
        )));
    }
    state.step_count += 1;
    let b1 = state.beta1;
    let b2 = state.beta2;
    let bc1 = T::one() - b1.powi(state.step_count as i32);
    let bc2 = T::one() - b2.powi(state.step_count as i32);
    for i in 0..data.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        data[i] = data[i] - state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    param.set_data(&data)?;
    param.zero_grad();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction, step one reduces to lr * g / (|g| + eps).
        let p = Tensor::<f64>::new(vec![0.3], &[1]).unwrap().requires_grad();
        p.accumulate_grad(&[1.0]);
        let mut state = AdamState::new(1, 1e-3);
        adam_step(&p, &mut state).unwrap();
        let moved = 0.3 - p.data()[0];
        assert!((moved - 1e-3).abs() < 1e-9, "moved {moved}");
        assert_eq!(state.step_count, 1);
        assert!(p.grad().is_none(), "gradient cleared after the step");
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameter_unchanged() {
        let p = Tensor::<f64>::new(vec![0.7, -0.2], &[2]).unwrap().requires_grad();
        p.accumulate_grad(&[0.0, 0.0]);
        let mut state = AdamState::new(2, 1e-3);
        adam_step(&p, &mut state).unwrap();
        assert_eq!(p.data(), vec![0.7, -0.2]);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let p = Tensor::<f64>::new(vec![0.5], &[1]).unwrap().requires_grad();
        let mut state = AdamState::new(1, 1e-3);
        assert!(matches!(adam_step(&p, &mut state).unwrap_err(), Error::OptimizerState(_)));
    }

    #[test]
    fn state_size_mismatch_is_an_error() {
        let p = Tensor::<f64>::new(vec![0.5, 0.1], &[2]).unwrap().requires_grad();
        p.accumulate_grad(&[1.0, 1.0]);
        let mut state = AdamState::new(3, 1e-3);
        assert!(matches!(adam_step(&p, &mut state).unwrap_err(), Error::OptimizerState(_)));
    }

    #[test]
    fn descends_a_quadratic() {
        // Minimize f(x) = (x - 2)^2 from x = -1; grad = 2 (x - 2).
        let p = Tensor::<f64>::new(vec![-1.0], &[1]).unwrap().requires_grad();
        let mut state = AdamState::new(1, 0.05);
        for _ in 0..2000 {
            p.accumulate_grad(&[2.0 * (p.data()[0] - 2.0)]);
            adam_step(&p, &mut state).unwrap();
        }
        assert!((p.data()[0] - 2.0).abs() < 1e-3, "ended at {}", p.data()[0]);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let p = Tensor::<f32>::new(vec![0.4, -0.9, 2.2], &[3]).unwrap().requires_grad();
            let mut state = AdamState::new(3, 1e-2);
            for k in 0..50 {
                let d = p.data();
                let g: Vec<f32> = d.iter().map(|x| (x * 1.3).sin() + k as f32 * 0.01).collect();
                p.accumulate_grad(&g);
                adam_step(&p, &mut state).unwrap();
            }
            p.data()
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
