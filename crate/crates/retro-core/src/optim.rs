//! SGD with momentum and weight decay.

use alloc::string::ToString;
use alloc::vec;

use crate::error::{Error, Result};
use crate::tensor::Parameter;

/// One SGD step over a set of parameters:
///
/// ```text
/// v     <- momentum * v + grad + weight_decay * theta
/// theta <- theta - lr * v
/// ```
///
/// Gradients are consumed (taken out of the parameter). A trainable
/// parameter without a gradient is an error; frozen parameters are left
/// bit-identical and may not carry gradients at all.
pub fn sgd_step<'a, I>(params: I, lr: f32, momentum: f32, weight_decay: f32) -> Result<()>
where
    I: IntoIterator<Item = &'a mut Parameter>,
{
    for p in params {
        if !p.trainable {
            debug_assert!(
                p.tensor.grad.is_none(),
                "frozen parameter `{}` unexpectedly carries a gradient",
                p.name()
            );
            continue;
        }
        let grad = p.tensor.grad.take().ok_or_else(|| Error::MissingGradient {
            name: p.name().to_string(),
        })?;
        let n = p.tensor.numel();
        if p.momentum.is_none() {
            p.momentum = Some(vec![0.0; n]);
        }
        let v = p.momentum.as_mut().unwrap();
        let theta = p.tensor.data_mut();
        for i in 0..n {
            v[i] = momentum * v[i] + grad[i] + weight_decay * theta[i];
            theta[i] -= lr * v[i];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn param(name: &str, data: &[f32], trainable: bool) -> Parameter {
        Parameter::new(name, Tensor::new(vec![data.len()], data.to_vec()).unwrap(), trainable)
    }

    #[test]
    fn plain_step_matches_hand_value() {
        // theta=1, grad=0.5, lr=0.1, no momentum/decay -> 0.95
        let mut p = param("w", &[1.0], true);
        p.tensor.grad = Some(vec![0.5]);
        sgd_step([&mut p], 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p.tensor.data(), &[0.95]);
        assert!(p.tensor.grad.is_none(), "gradient consumed by the step");
    }

    #[test]
    fn momentum_accumulates_velocity() {
        // Two steps with constant grad g: v1 = g, v2 = m*g + g.
        let mut p = param("w", &[0.0], true);
        p.tensor.grad = Some(vec![1.0]);
        sgd_step([&mut p], 0.1, 0.9, 0.0).unwrap();
        assert!((p.tensor.data()[0] - -0.1).abs() < 1e-7);
        p.tensor.grad = Some(vec![1.0]);
        sgd_step([&mut p], 0.1, 0.9, 0.0).unwrap();
        // v2 = 0.9 + 1.0 = 1.9; theta = -0.1 - 0.19 = -0.29
        assert!((p.tensor.data()[0] - -0.29).abs() < 1e-7);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut p = param("w", &[2.0], true);
        p.tensor.grad = Some(vec![0.0]);
        sgd_step([&mut p], 0.1, 0.0, 0.5).unwrap();
        // v = 0 + 0 + 0.5*2 = 1; theta = 2 - 0.1 = 1.9
        assert!((p.tensor.data()[0] - 1.9).abs() < 1e-7);
    }

    #[test]
    fn frozen_parameters_are_bit_identical_after_step() {
        let mut frozen = param("head.w", &[0.25, -1.5, 3.125], false);
        let before = frozen.tensor.data().to_vec();
        let mut live = param("enc.w", &[1.0, 1.0, 1.0], true);
        live.tensor.grad = Some(vec![0.1, 0.2, 0.3]);
        sgd_step([&mut frozen, &mut live], 0.5, 0.9, 1e-4).unwrap();
        assert_eq!(
            frozen.tensor.data().iter().map(|v| v.to_bits()).collect::<alloc::vec::Vec<_>>(),
            before.iter().map(|v| v.to_bits()).collect::<alloc::vec::Vec<_>>()
        );
    }

    #[test]
    fn missing_gradient_on_trainable_param_is_an_error() {
        let mut p = param("enc.stage0.conv.weight", &[1.0], true);
        let err = sgd_step([&mut p], 0.1, 0.9, 0.0).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("enc.stage0.conv.weight"), "{msg}");
    }
}
