//! Forward/backward kernel pairs and the finite-difference gradient checker.
//!
//! Each kernel exposes plain functions (`*_forward`, `*_backward`) plus a
//! thin [`DifferentiableOp`] wrapper so the checker can drive it uniformly.

mod activation;
mod conv;
mod linear;
mod norm;

pub use activation::{activation_backward, activation_forward, Activation, ActivationOp};
pub use conv::{
    depthwise_conv2d, depthwise_conv2d_backward, pointwise_conv2d, pointwise_conv2d_backward,
    Conv2dOp, ConvMode,
};
pub use linear::{linear_backward, linear_forward, LinearOp};
pub use norm::{
    batch_norm_backward, batch_norm_eval, batch_norm_train, layer_norm_backward,
    layer_norm_forward, BatchNormCache, LayerNormCache, NormKind, NormalizeOp,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An operation with a paired forward map and vector-Jacobian backward map.
///
/// `backward` receives the original inputs plus the upstream cotangent (same
/// shape as the forward output) and returns one cotangent per input, with
/// matching shapes.
pub trait DifferentiableOp {
    fn name(&self) -> &str;

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor>;

    fn backward(&self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>>;
}

/// Compares the analytic vector-Jacobian products of `op` against central
/// finite differences along random directions and returns the worst relative
/// error observed.
///
/// For each input `x_i` and random direction `v`, the directional derivative
/// of `<f(x), u>` (with `u` a random cotangent) must equal `<backward_i, v>`.
pub fn grad_check(
    op: &dyn DifferentiableOp,
    inputs: &[Tensor],
    eps: f64,
    seed: u64,
) -> Result<f64> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::GradCheck(format!(
            "step {} outside supported range [1e-7, 1e-4]",
            eps
        )));
    }
    let base = op.forward(inputs)?;
    if !base.all_finite() {
        return Err(Error::GradCheck(format!(
            "{}: forward output is non-finite at the probe point",
            op.name()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..2 {
        let upstream = Tensor::randn(base.shape(), &mut rng);
        let grads = op.backward(inputs, &upstream)?;
        if grads.len() != inputs.len() {
            return Err(Error::GradCheck(format!(
                "{}: backward returned {} cotangents for {} inputs",
                op.name(),
                grads.len(),
                inputs.len()
            )));
        }
        for (i, grad) in grads.iter().enumerate() {
            if grad.shape() != inputs[i].shape() {
                return Err(Error::GradCheck(format!(
                    "{}: cotangent {} has shape {:?}, input has {:?}",
                    op.name(),
                    i,
                    grad.shape(),
                    inputs[i].shape()
                )));
            }
            let direction = Tensor::randn(inputs[i].shape(), &mut rng);
            let analytic = grad.dot(&direction)?;

            let mut probe = inputs.to_vec();
            probe[i] = inputs[i].zip_map(&direction, |x, v| x + eps * v)?;
            let plus = op.forward(&probe)?;
            probe[i] = inputs[i].zip_map(&direction, |x, v| x - eps * v)?;
            let minus = op.forward(&probe)?;
            if !plus.all_finite() || !minus.all_finite() {
                return Err(Error::GradCheck(format!(
                    "{}: perturbed forward output is non-finite",
                    op.name()
                )));
            }
            let plus_dot = plus.dot(&upstream)?;
            let minus_dot = minus.dot(&upstream)?;
            let numeric = (plus_dot - minus_dot) / (2.0 * eps);

            // The central difference cancels two nearly equal O(|f.u|)
            // values, and each forward accumulates rounding over many flops,
            // so derivatives below this level are not measurable; the floor
            // keeps them from registering as error.
            let noise = (plus_dot.abs() + minus_dot.abs() + 1.0) * f64::EPSILON / (2.0 * eps)
                * 1e5;
            let rel = (analytic - numeric).abs()
                / analytic.abs().max(numeric.abs()).max(noise).max(1e-9);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic;

    impl DifferentiableOp for Quadratic {
        fn name(&self) -> &str {
            "quadratic"
        }

        fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
            Ok(inputs[0].map(|v| v * v))
        }

        fn backward(&self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
            Ok(vec![inputs[0].zip_map(upstream, |x, u| 2.0 * x * u)?])
        }
    }

    struct BrokenBackward;

    impl DifferentiableOp for BrokenBackward {
        fn name(&self) -> &str {
            "broken"
        }

        fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
            Ok(inputs[0].clone())
        }

        fn backward(&self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
            // Deliberately wrong by a factor of two.
            Ok(vec![inputs[0].zip_map(upstream, |_, u| 2.0 * u)?])
        }
    }

    #[test]
    fn accepts_correct_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::randn(&[3, 3], &mut rng);
        let err = grad_check(&Quadratic, &[x], 1e-5, 1).unwrap();
        assert!(err < 1e-6, "relative error {}", err);
    }

    #[test]
    fn flags_incorrect_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::randn(&[4], &mut rng);
        let err = grad_check(&BrokenBackward, &[x], 1e-5, 1).unwrap();
        assert!(err > 0.1, "broken backward slipped through: {}", err);
    }

    #[test]
    fn rejects_out_of_range_step() {
        let x = Tensor::zeros(&[2]);
        assert!(grad_check(&Quadratic, &[x], 1e-2, 1).is_err());
    }

    #[test]
    fn aborts_on_non_finite_forward() {
        let x = Tensor::from_vec(&[1], vec![1e200]).unwrap();
        let err = grad_check(&Quadratic, &[x], 1e-5, 1).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }
}
