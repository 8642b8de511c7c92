//! Adam optimizer with bias correction.

use super::{Element, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

/// Per-parameter moment estimates; `t` increments by exactly one per step.
struct State<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

/// Standard Adam over a fixed parameter list.
///
/// `step` applies the bias-corrected update in place and clears every
/// parameter's gradient afterwards; a parameter without a populated gradient
/// is an error, which catches broken wiring early.
pub struct Adam<T: Element> {
    params: Vec<Tensor<T>>,
    states: Vec<State<T>>,
    config: AdamConfig,
}

impl<T: Element> Adam<T> {
    pub fn new(params: Vec<Tensor<T>>, config: AdamConfig) -> Self {
        let states = params
            .iter()
            .map(|p| State { m: vec![T::zero(); p.len()], v: vec![T::zero(); p.len()], t: 0 })
            .collect();
        Adam { params, states, config }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step(&mut self) -> Result<()> {
        let b1 = T::from_f64(self.config.beta1);
        let b2 = T::from_f64(self.config.beta2);
        let eps = T::from_f64(self.config.eps);
        let one = T::one();
        for (param, state) in self.params.iter().zip(self.states.iter_mut()) {
            let grad = param.grad().ok_or_else(|| {
                Error::Train(format!("adam step with missing gradient on {param:?}"))
            })?;
            state.t += 1;
            let lr = T::from_f64(self.config.lr);
            let bc1 = one - b1.powi(state.t as i32);
            let bc2 = one - b2.powi(state.t as i32);
            let mut data = param.data_mut();
            for ((p, g), (m, v)) in data
                .iter_mut()
                .zip(grad.iter())
                .zip(state.m.iter_mut().zip(state.v.iter_mut()))
            {
                *m = b1 * *m + (one - b1) * *g;
                *v = b2 * *v + (one - b2) * *g * *g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
            drop(data);
            param.clear_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // With grad = 1 everywhere, bias correction gives m_hat = v_hat = 1,
        // so the update is lr / (1 + eps).
        let p = Tensor::<f64>::full(&[4], 2.0).requires_grad();
        p.set_grad(vec![1.0; 4]);
        let mut opt = Adam::new(vec![p.clone()], AdamConfig::with_lr(1e-3));
        opt.step().unwrap();
        for &v in p.data().iter() {
            assert!((v - (2.0 - 1e-3 / (1.0 + 1e-8))).abs() < 1e-6);
        }
        assert!(p.grad().is_none(), "gradients must be cleared by the step");
    }

    #[test]
    fn zero_grad_leaves_params_but_advances_t() {
        let p = Tensor::<f64>::full(&[3], 1.5).requires_grad();
        p.set_grad(vec![0.0; 3]);
        let mut opt = Adam::new(vec![p.clone()], AdamConfig::default());
        opt.step().unwrap();
        assert_eq!(p.to_vec(), vec![1.5; 3]);
        assert_eq!(opt.states[0].t, 1);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let p = Tensor::<f64>::full(&[3], 1.5).requires_grad();
        let mut opt = Adam::new(vec![p.clone()], AdamConfig::default());
        assert!(opt.step().is_err());
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        // Scalar reference implementation, same constants.
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.01);
        let g = 0.7;
        let mut x = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1f(t, b1));
            let vh = v / (1.0 - b1f(t, b2));
            x -= lr * mh / (vh.sqrt() + eps);
        }

        let p = Tensor::<f64>::full(&[1], 1.0).requires_grad();
        let mut opt = Adam::new(vec![p.clone()], AdamConfig::with_lr(lr));
        for _ in 0..2 {
            p.set_grad(vec![g]);
            opt.step().unwrap();
        }
        assert!((p.item() - x).abs() < 1e-12, "{} vs {}", p.item(), x);
    }

    fn b1f(t: u64, beta: f64) -> f64 {
        beta.powi(t as i32)
    }
}
