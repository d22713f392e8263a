//! Elementwise activations: leaky ReLU and tanh.

use super::LayerGrad;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn leaky_relu_forward(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v >= 0.0 { v } else { slope * v })
}

/// Backward pass for leaky ReLU. The kink at zero uses the positive branch,
/// i.e. the subgradient there is 1.
pub fn leaky_relu_backward(x: &Tensor, slope: f64, grad_out: &Tensor) -> Result<LayerGrad> {
    if x.shape() != grad_out.shape() {
        return Err(Error::shape(format!(
            "leaky_relu gradient {:?} does not match input {:?}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let mut input_grad = Tensor::zeros(x.shape());
    for ((d, &g), &v) in input_grad.data_mut().iter_mut().zip(grad_out.data()).zip(x.data()) {
        *d = if v >= 0.0 { g } else { slope * g };
    }
    Ok(LayerGrad::input_only(input_grad))
}

pub fn tanh_forward(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Backward pass for tanh, expressed through the forward output `y`:
/// `dx = (1 - y^2) * g`.
pub fn tanh_backward(y: &Tensor, grad_out: &Tensor) -> Result<LayerGrad> {
    if y.shape() != grad_out.shape() {
        return Err(Error::shape(format!(
            "tanh gradient {:?} does not match output {:?}",
            grad_out.shape(),
            y.shape()
        )));
    }
    let mut input_grad = Tensor::zeros(y.shape());
    for ((d, &g), &v) in input_grad.data_mut().iter_mut().zip(grad_out.data()).zip(y.data()) {
        *d = (1.0 - v * v) * g;
    }
    Ok(LayerGrad::input_only(input_grad))
}
