//! Central finite-difference gradient verification.
//!
//! Runs in `f64` only: at `f32` the subtraction in the central difference
//! loses too many bits for a meaningful comparison.

use super::{Tape, Tensor};
use crate::Result;

/// Default perturbation for central differences.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Compares autodiff gradients of a scalar-valued function against central
/// finite differences over every coordinate of every input.
///
/// Returns the maximum relative error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    for input in inputs {
        input.clear_grad();
    }
    let tape = Tape::new();
    let loss = f(&tape, inputs)?;
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    for input in inputs {
        input.clear_grad();
    }

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::inference();
        Ok(f(&tape, inputs)?.item())
    };

    let mut max_rel = 0.0f64;
    for (ti, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            input.data_mut()[j] = orig + h;
            let f_plus = eval(inputs)?;
            input.data_mut()[j] = orig - h;
            let f_minus = eval(inputs)?;
            input.data_mut()[j] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic[ti][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;
    use crate::tensor::IntTensor;

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(12345);
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
            })
            .collect()
    }

    #[test]
    fn sum_has_exact_unit_gradient() {
        let x = Tensor::from_vec(vec![5], pseudo_random(5, 3)).unwrap().requires_grad();
        let err = grad_check(|tape, ins| Ok(ops::sum_all(tape, &ins[0])), &[x], DEFAULT_STEP).unwrap();
        assert!(err < 1e-10, "max rel error {err}");
    }

    #[test]
    fn conv_smooth_l1_composite_passes() {
        let x = Tensor::from_vec(vec![1, 2, 4, 4], pseudo_random(32, 11)).unwrap().requires_grad();
        let w = Tensor::from_vec(vec![3, 2, 3, 3], pseudo_random(54, 12)).unwrap().requires_grad();
        let target = Tensor::from_vec(vec![1, 3, 4, 4], pseudo_random(48, 13)).unwrap();
        let err = grad_check(
            |tape, ins| {
                let y = ops::conv2d(tape, &ins[0], &ins[1], None, 1, 1)?;
                ops::smooth_l1(tape, &y, &target)
            },
            &[x, w],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel error {err}");
    }

    #[test]
    fn softmax_cross_entropy_passes() {
        let logits = Tensor::from_vec(vec![1, 3, 2, 2], pseudo_random(12, 21)).unwrap().requires_grad();
        let labels = IntTensor::from_vec(vec![1, 2, 2], vec![0, 2, 1, 1]).unwrap();
        let err = grad_check(
            |tape, ins| ops::softmax_cross_entropy(tape, &ins[0], &labels, None),
            &[logits],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel error {err}");
    }

    #[test]
    fn batch_norm_train_mode_passes() {
        let x = Tensor::from_vec(vec![2, 2, 3, 3], pseudo_random(36, 31)).unwrap().requires_grad();
        let gamma = Tensor::from_vec(vec![2], vec![1.2, 0.8]).unwrap().requires_grad();
        let beta = Tensor::from_vec(vec![2], vec![0.1, -0.2]).unwrap().requires_grad();
        let target = Tensor::from_vec(vec![2, 2, 3, 3], pseudo_random(36, 32)).unwrap();
        let err = grad_check(
            |tape, ins| {
                let rm = Tensor::zeros(&[2]);
                let rv = Tensor::full(&[2], 1.0);
                let y = ops::batch_norm(
                    tape,
                    &ins[0],
                    &ins[1],
                    &ins[2],
                    &rm,
                    &rv,
                    ops::BnMode::Train,
                    0.1,
                    1e-5,
                )?;
                ops::smooth_l1(tape, &y, &target)
            },
            &[x, gamma, beta],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel error {err}");
    }
}
