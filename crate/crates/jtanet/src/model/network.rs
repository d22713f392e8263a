//! Layer table and the shared forward/backward runner.
//!
//! Both networks are described by a list of [`LayerSpec`]s; the runner
//! executes conv (or transposed conv), batch norm, activation, and an
//! optional 2x resample per layer, caching exactly what the backward pass
//! needs. Keeping one runner for both networks means gradient plumbing is
//! written (and tested) once.

use super::{Mode, ModelConfig, ModelParams, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::ops::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward,
    conv2d_transpose_backward, conv2d_transpose_forward, leaky_relu_backward, leaky_relu_forward,
    maxpool2x2_backward, maxpool2x2_forward, tanh_backward, tanh_forward, upsample_bilinear2x_backward,
    upsample_bilinear2x_forward, BnCache, BN_EPS, BN_MOMENTUM,
};
use crate::tensor::Tensor;
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Resample {
    None,
    MaxPool,
    Upsample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Activation {
    LeakyRelu,
    Tanh,
}

#[derive(Clone, Debug)]
pub(crate) struct LayerSpec {
    pub id: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub transposed: bool,
    pub act: Activation,
    pub resample: Resample,
}

impl LayerSpec {
    pub(crate) fn kernel_name(&self) -> String {
        format!("{}.conv.w", self.id)
    }
}

/// Encoder: 3 -> 64 -> 128 -> 256 -> 512 -> 1024 -> 1024 -> EL (scaled
/// internal widths), max pooling after layers 1-6.
pub(crate) fn encoder_layers(cfg: &ModelConfig) -> Vec<LayerSpec> {
    let w = cfg.stage_widths();
    let chain = [3, w[0], w[1], w[2], w[3], w[4], w[5], cfg.embedding_len];
    (0..7)
        .map(|i| LayerSpec {
            id: format!("enc{}", i + 1),
            in_ch: chain[i],
            out_ch: chain[i + 1],
            transposed: false,
            act: Activation::LeakyRelu,
            resample: if i < 6 { Resample::MaxPool } else { Resample::None },
        })
        .collect()
}

/// Decoder: EL -> 1024 -> 1024 -> 512 -> 256 -> 128 -> 64 -> 3 (scaled
/// internal widths), bilinear upsampling after layers 1-6, tanh at the end.
pub(crate) fn decoder_layers(cfg: &ModelConfig) -> Vec<LayerSpec> {
    let w = cfg.stage_widths();
    let chain = [cfg.embedding_len, w[5], w[4], w[3], w[2], w[1], w[0], 3];
    (0..7)
        .map(|i| LayerSpec {
            id: format!("dec{}", i + 1),
            in_ch: chain[i],
            out_ch: chain[i + 1],
            transposed: true,
            act: if i == 6 { Activation::Tanh } else { Activation::LeakyRelu },
            resample: if i < 6 { Resample::Upsample } else { Resample::None },
        })
        .collect()
}

#[derive(Debug)]
enum ActCache {
    /// Pre-activation input of a leaky ReLU.
    Leaky(Tensor),
    /// Output of a tanh.
    Tanh(Tensor),
}

/// Per-layer values captured by a training forward pass.
#[derive(Debug)]
pub(crate) struct LayerCache {
    conv_input: Tensor,
    bn: BnCache,
    act: ActCache,
    /// Input shape and argmax positions of the max pool, if present.
    pool: Option<(Vec<usize>, Vec<u8>)>,
    /// Input shape of the upsample, if present.
    upsample: Option<Vec<usize>>,
}

/// Result of running one network over a batch.
#[derive(Debug)]
pub(crate) struct ForwardPass {
    pub output: Tensor,
    /// One entry per layer when caching was requested, otherwise empty.
    pub caches: Vec<LayerCache>,
    /// Updated running statistics (train mode only); callers decide whether
    /// to commit them via [`ModelParams::apply_running_updates`].
    pub running_updates: Vec<(String, Tensor)>,
}

pub(crate) fn forward_network(
    layers: &[LayerSpec],
    params: &ModelParams,
    input: &Tensor,
    mode: Mode,
    want_cache: bool,
) -> Result<ForwardPass> {
    let mut x = input.clone();
    let mut caches = Vec::new();
    let mut running_updates = Vec::new();
    for layer in layers {
        let w = params.get(&layer.kernel_name())?;
        let conv_input = x;
        let conv_out = if layer.transposed {
            conv2d_transpose_forward(&conv_input, w)?
        } else {
            conv2d_forward(&conv_input, w)?
        };

        let bn = batchnorm_forward(
            &conv_out,
            params.get(&format!("{}.bn.gamma", layer.id))?,
            params.get(&format!("{}.bn.beta", layer.id))?,
            params.get(&format!("{}.bn.running_mean", layer.id))?,
            params.get(&format!("{}.bn.running_var", layer.id))?,
            BN_EPS,
            BN_MOMENTUM,
            mode.bn(),
        )?;
        if mode == Mode::Train {
            running_updates.push((format!("{}.bn.running_mean", layer.id), bn.running_mean));
            running_updates.push((format!("{}.bn.running_var", layer.id), bn.running_var));
        }

        let (act_out, act_cache) = match layer.act {
            Activation::LeakyRelu => {
                let y = leaky_relu_forward(&bn.output, LEAKY_SLOPE);
                (y, ActCache::Leaky(bn.output))
            }
            Activation::Tanh => {
                let y = tanh_forward(&bn.output);
                (y.clone(), ActCache::Tanh(y))
            }
        };

        let mut pool_cache = None;
        let mut upsample_cache = None;
        let out = match layer.resample {
            Resample::None => act_out,
            Resample::MaxPool => {
                let f = maxpool2x2_forward(&act_out)?;
                pool_cache = Some((act_out.shape().to_vec(), f.argmax));
                f.output
            }
            Resample::Upsample => {
                upsample_cache = Some(act_out.shape().to_vec());
                upsample_bilinear2x_forward(&act_out)?
            }
        };

        if want_cache {
            caches.push(LayerCache {
                conv_input,
                bn: bn.cache,
                act: act_cache,
                pool: pool_cache,
                upsample: upsample_cache,
            });
        }
        x = out;
    }
    Ok(ForwardPass { output: x, caches, running_updates })
}

/// Propagates `grad_out` back through the network, returning the gradient at
/// the network input and one gradient per trainable parameter (kernels,
/// batch-norm gamma and beta).
pub(crate) fn backward_network(
    layers: &[LayerSpec],
    params: &ModelParams,
    caches: &[LayerCache],
    grad_out: &Tensor,
) -> Result<(Tensor, BTreeMap<String, Tensor>)> {
    if caches.len() != layers.len() {
        return Err(Error::invalid(format!(
            "have {} layer caches for {} layers; forward must run with caching",
            caches.len(),
            layers.len()
        )));
    }
    let mut grads = BTreeMap::new();
    let mut g = grad_out.clone();
    for (layer, cache) in layers.iter().zip(caches).rev() {
        g = match (&cache.pool, &cache.upsample) {
            (Some((shape, argmax)), _) => maxpool2x2_backward(shape, argmax, &g)?.input_grad,
            (_, Some(shape)) => upsample_bilinear2x_backward(shape, &g)?.input_grad,
            _ => g,
        };

        g = match &cache.act {
            ActCache::Leaky(x) => leaky_relu_backward(x, LEAKY_SLOPE, &g)?.input_grad,
            ActCache::Tanh(y) => tanh_backward(y, &g)?.input_grad,
        };

        let bn_grad = batchnorm_backward(&cache.bn, &g)?;
        for (short, tensor) in bn_grad.param_grads {
            grads.insert(format!("{}.bn.{short}", layer.id), tensor);
        }
        g = bn_grad.input_grad;

        let w = params.get(&layer.kernel_name())?;
        let conv_grad = if layer.transposed {
            conv2d_transpose_backward(&cache.conv_input, w, &g)?
        } else {
            conv2d_backward(&cache.conv_input, w, &g)?
        };
        grads.insert(layer.kernel_name(), conv_grad.param_grads["w"].clone());
        g = conv_grad.input_grad;
    }
    Ok((g, grads))
}
