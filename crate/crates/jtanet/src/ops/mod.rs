//! Differentiable layer primitives.
//!
//! Each primitive comes as a forward function and a backward function that
//! maps the loss gradient at the output back to the input and to any
//! parameters. Backward results are collected in [`LayerGrad`]. All kernels
//! accumulate in a fixed order, so outputs are reproducible bit for bit;
//! data parallelism (rayon) only ever splits work across independent output
//! regions.

mod activation;
mod batchnorm;
mod conv;
mod pool;
mod upsample;

pub use activation::{leaky_relu_backward, leaky_relu_forward, tanh_backward, tanh_forward};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, BnCache, BnForward, BnMode, BN_EPS, BN_MOMENTUM,
};
pub use conv::{
    conv2d_backward, conv2d_forward, conv2d_transpose_backward, conv2d_transpose_forward,
};
pub use pool::{maxpool2x2_backward, maxpool2x2_forward, MaxPoolForward};
pub(crate) use upsample::lerp_table;
pub use upsample::{upsample_bilinear2x_backward, upsample_bilinear2x_forward};

use crate::tensor::Tensor;
use std::collections::BTreeMap;

/// Gradients produced by one layer's backward pass: the gradient with respect
/// to the layer input plus one named entry per learnable parameter.
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub input_grad: Tensor,
    pub param_grads: BTreeMap<String, Tensor>,
}

impl LayerGrad {
    pub fn input_only(input_grad: Tensor) -> LayerGrad {
        LayerGrad { input_grad, param_grads: BTreeMap::new() }
    }
}
