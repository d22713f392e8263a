//! Batch normalization over the channel axis of `(B, C, H, W)` tensors.
//!
//! Training mode normalizes with the biased batch statistics (divide by
//! `n = B*H*W`) and folds them into the running estimates as
//! `running = (1 - momentum) * running + momentum * batch`. Evaluation mode
//! normalizes with the running estimates and leaves them untouched. The
//! forward never mutates its inputs; callers decide whether to commit the
//! returned running statistics.

use super::LayerGrad;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::BTreeMap;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Everything the backward pass needs, captured at forward time.
#[derive(Debug, Clone)]
pub struct BnCache {
    mode: BnMode,
    dims: (usize, usize, usize, usize),
    x_hat: Tensor,
    inv_std: Vec<f64>,
    gamma: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BnForward {
    pub output: Tensor,
    pub cache: BnCache,
    /// Post-update running statistics; identical to the inputs in eval mode.
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

fn check_per_channel(t: &Tensor, c: usize, what: &str) -> Result<()> {
    if t.shape() != [c] {
        return Err(Error::shape(format!(
            "{what} must have shape [{c}], got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

pub fn batchnorm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    eps: f64,
    momentum: f64,
    mode: BnMode,
) -> Result<BnForward> {
    let (b, c, h, w) = x.dims4()?;
    check_per_channel(gamma, c, "gamma")?;
    check_per_channel(beta, c, "beta")?;
    check_per_channel(running_mean, c, "running_mean")?;
    check_per_channel(running_var, c, "running_var")?;
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("batchnorm eps must be positive, got {eps}")));
    }
    let plane = h * w;
    let n = (b * plane) as f64;
    let xs = x.data();

    // Per-channel mean and variance in a fixed batch-major order.
    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        BnMode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for (ch, m) in mean.iter_mut().enumerate() {
                let mut acc = 0.0;
                for bi in 0..b {
                    let p = &xs[(bi * c + ch) * plane..(bi * c + ch + 1) * plane];
                    for v in p {
                        acc += v;
                    }
                }
                *m = acc / n;
            }
            for (ch, va) in var.iter_mut().enumerate() {
                let m = mean[ch];
                let mut acc = 0.0;
                for bi in 0..b {
                    let p = &xs[(bi * c + ch) * plane..(bi * c + ch + 1) * plane];
                    for v in p {
                        let d = v - m;
                        acc += d * d;
                    }
                }
                *va = acc / n;
            }
            (mean, var)
        }
        BnMode::Eval => (running_mean.data().to_vec(), running_var.data().to_vec()),
    };

    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();

    let mut x_hat = Tensor::zeros(x.shape());
    let mut output = Tensor::zeros(x.shape());
    {
        let xh = x_hat.data_mut();
        let out = output.data_mut();
        for bi in 0..b {
            for ch in 0..c {
                let base = (bi * c + ch) * plane;
                let (m, is, g, be) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
                for i in base..base + plane {
                    let xh_v = (xs[i] - m) * is;
                    xh[i] = xh_v;
                    out[i] = g * xh_v + be;
                }
            }
        }
    }

    let (new_mean, new_var) = match mode {
        BnMode::Train => {
            let mut rm = running_mean.clone();
            let mut rv = running_var.clone();
            for ch in 0..c {
                rm.data_mut()[ch] = (1.0 - momentum) * rm.data()[ch] + momentum * mean[ch];
                rv.data_mut()[ch] = (1.0 - momentum) * rv.data()[ch] + momentum * var[ch];
            }
            (rm, rv)
        }
        BnMode::Eval => (running_mean.clone(), running_var.clone()),
    };

    Ok(BnForward {
        output,
        cache: BnCache {
            mode,
            dims: (b, c, h, w),
            x_hat,
            inv_std,
            gamma: gamma.data().to_vec(),
        },
        running_mean: new_mean,
        running_var: new_var,
    })
}

/// Backward pass. In train mode the batch statistics depend on every element,
/// which couples the gradient across the batch; in eval mode the
/// normalization is a fixed affine map.
pub fn batchnorm_backward(cache: &BnCache, grad_out: &Tensor) -> Result<LayerGrad> {
    let (b, c, h, w) = cache.dims;
    if grad_out.shape() != [b, c, h, w] {
        return Err(Error::shape(format!(
            "gradient shape {:?} does not match forward shape {:?}",
            grad_out.shape(),
            [b, c, h, w]
        )));
    }
    let plane = h * w;
    let n = (b * plane) as f64;
    let gs = grad_out.data();
    let xh = cache.x_hat.data();

    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ch in 0..c {
        let mut dg = 0.0;
        let mut db = 0.0;
        for bi in 0..b {
            let base = (bi * c + ch) * plane;
            for i in base..base + plane {
                dg += gs[i] * xh[i];
                db += gs[i];
            }
        }
        dgamma[ch] = dg;
        dbeta[ch] = db;
    }

    let mut input_grad = Tensor::zeros(&[b, c, h, w]);
    let dx = input_grad.data_mut();
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * plane;
            let scale = cache.gamma[ch] * cache.inv_std[ch];
            match cache.mode {
                BnMode::Train => {
                    let (dg, db) = (dgamma[ch], dbeta[ch]);
                    for i in base..base + plane {
                        dx[i] = scale * (gs[i] - db / n - xh[i] * dg / n);
                    }
                }
                BnMode::Eval => {
                    for i in base..base + plane {
                        dx[i] = scale * gs[i];
                    }
                }
            }
        }
    }

    let mut param_grads = BTreeMap::new();
    param_grads.insert("gamma".to_string(), Tensor::from_vec(&[c], dgamma)?);
    param_grads.insert("beta".to_string(), Tensor::from_vec(&[c], dbeta)?);
    Ok(LayerGrad { input_grad, param_grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&[4, 3, 5, 5], &mut rng);
        let gamma = Tensor::filled(&[3], 1.0);
        let beta = Tensor::zeros(&[3]);
        let rm = Tensor::zeros(&[3]);
        let rv = Tensor::filled(&[3], 1.0);
        let f = batchnorm_forward(&x, &gamma, &beta, &rm, &rv, 1e-5, 0.1, BnMode::Train).unwrap();
        let (b, c, h, w) = x.dims4().unwrap();
        let plane = h * w;
        let n = (b * plane) as f64;
        for ch in 0..c {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for bi in 0..b {
                let base = (bi * c + ch) * plane;
                for i in base..base + plane {
                    sum += f.output.data()[i];
                    sq += f.output.data()[i] * f.output.data()[i];
                }
            }
            let mean = sum / n;
            let var = sq / n - mean * mean;
            assert!(mean.abs() < 1e-10, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "channel {ch} var {var}");
        }
    }

    #[test]
    fn running_stats_blend_with_momentum() {
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        let gamma = Tensor::filled(&[1], 1.0);
        let beta = Tensor::zeros(&[1]);
        let rm = Tensor::filled(&[1], 10.0);
        let rv = Tensor::filled(&[1], 4.0);
        let f = batchnorm_forward(&x, &gamma, &beta, &rm, &rv, 1e-5, 0.1, BnMode::Train).unwrap();
        // Batch mean 2, biased batch var 1.
        assert!((f.running_mean.data()[0] - (0.9 * 10.0 + 0.1 * 2.0)).abs() < 1e-12);
        assert!((f.running_var.data()[0] - (0.9 * 4.0 + 0.1 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn eval_uses_running_stats_and_keeps_them() {
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        let gamma = Tensor::filled(&[1], 2.0);
        let beta = Tensor::filled(&[1], 0.5);
        let rm = Tensor::filled(&[1], 1.0);
        let rv = Tensor::filled(&[1], 4.0);
        let f =
            batchnorm_forward(&x, &gamma, &beta, &rm, &rv, 1e-12, 0.1, BnMode::Eval).unwrap();
        // (x - 1) / sqrt(4 + eps) * 2 + 0.5
        assert!((f.output.data()[0] - 0.5).abs() < 1e-6);
        assert!((f.output.data()[1] - (2.0 / 2.0 * 2.0 + 0.5)).abs() < 1e-6);
        assert_eq!(f.running_mean.data(), rm.data());
        assert_eq!(f.running_var.data(), rv.data());
    }

    #[test]
    fn train_backward_gradient_sums_to_zero_per_channel() {
        // Row sums of dx vanish per channel because the batch mean absorbs
        // any constant shift.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&[3, 2, 4, 4], &mut rng);
        let gamma = rand_tensor(&[2], &mut rng);
        let beta = rand_tensor(&[2], &mut rng);
        let rm = Tensor::zeros(&[2]);
        let rv = Tensor::filled(&[2], 1.0);
        let f = batchnorm_forward(&x, &gamma, &beta, &rm, &rv, 1e-5, 0.1, BnMode::Train).unwrap();
        let g = rand_tensor(&[3, 2, 4, 4], &mut rng);
        let grad = batchnorm_backward(&f.cache, &g).unwrap();
        for ch in 0..2 {
            let mut sum = 0.0;
            for bi in 0..3 {
                let base = (bi * 2 + ch) * 16;
                for i in base..base + 16 {
                    sum += grad.input_grad.data()[i];
                }
            }
            assert!(sum.abs() < 1e-9, "channel {ch} grad sum {sum}");
        }
        assert!(grad.param_grads.contains_key("gamma"));
        assert!(grad.param_grads.contains_key("beta"));
    }
}
