use crate::error::Result;
use crate::ops::DifferentiableOp;
use crate::tensor::Tensor;

/// Elementwise nonlinearities used across the stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Silu,
    Softplus,
    Exp,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow for large `x`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x * sigmoid(x),
            Activation::Softplus => softplus(x),
            Activation::Exp => x.exp(),
        }
    }

    /// Derivative at `x`; relu takes subgradient 0 at the kink.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Softplus => sigmoid(x),
            Activation::Exp => x.exp(),
        }
    }
}

pub fn activation_forward(x: &Tensor, kind: Activation) -> Tensor {
    x.map(|v| kind.apply(v))
}

pub fn activation_backward(x: &Tensor, kind: Activation, dy: &Tensor) -> Result<Tensor> {
    x.zip_map(dy, |v, g| kind.derivative(v) * g)
}

/// Inputs: `[x]`.
pub struct ActivationOp(pub Activation);

impl DifferentiableOp for ActivationOp {
    fn name(&self) -> &str {
        match self.0 {
            Activation::Relu => "relu",
            Activation::Silu => "silu",
            Activation::Softplus => "softplus",
            Activation::Exp => "exp",
        }
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        Ok(activation_forward(&inputs[0], self.0))
    }

    fn backward(&self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![activation_backward(&inputs[0], self.0, upstream)?])
    }
}
