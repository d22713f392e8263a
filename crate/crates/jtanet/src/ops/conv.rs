//! 3x3 convolution and its transpose, stride 1, zero padding 1, no bias.
//!
//! Both layers share one cross-correlation kernel. `conv2d_forward(x, w)`
//! correlates `x` with `w[out][in]`; the transposed layer is its exact
//! adjoint, obtained by swapping the two channel axes of the kernel and
//! flipping it spatially before correlating. Keeping a single code path means
//! the adjoint identity `<conv(x), y> == <x, conv_t(y)>` holds to rounding
//! error by construction, which the tests exploit.

use super::LayerGrad;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rayon::prelude::*;
use std::collections::BTreeMap;

const K: usize = 3;
const PAD: usize = 1;

fn check_kernel(w: &Tensor, what: &str) -> Result<(usize, usize)> {
    let (o, i, kh, kw) = w.dims4()?;
    if kh != K || kw != K {
        return Err(Error::shape(format!("{what} kernel must be 3x3, got {kh}x{kw}")));
    }
    Ok((o, i))
}

/// Correlates `x (B, A, H, W)` with `k (O, A, 3, 3)` producing `(B, O, H, W)`.
fn correlate(x: &Tensor, k: &Tensor) -> Result<Tensor> {
    let (b, a, h, w) = x.dims4()?;
    let (o, ka) = check_kernel(k, "conv")?;
    if ka != a {
        return Err(Error::shape(format!(
            "kernel expects {ka} input channels, tensor has {a}"
        )));
    }
    let plane = h * w;
    let xs = x.data();
    let ks = k.data();
    let mut y = Tensor::zeros(&[b, o, h, w]);

    // One (batch, out-channel) plane per task; each task owns its output
    // slice, so the parallel split cannot change any accumulation order.
    y.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(task, yplane)| {
            let bi = task / o;
            let oc = task % o;
            for ac in 0..a {
                let xplane = &xs[(bi * a + ac) * plane..(bi * a + ac + 1) * plane];
                let taps = &ks[(oc * a + ac) * K * K..(oc * a + ac + 1) * K * K];
                for r in 0..K {
                    for s in 0..K {
                        let t = taps[r * K + s];
                        // Output rows/cols for which the shifted input index
                        // (p + r - PAD, q + s - PAD) stays in bounds.
                        let p0 = PAD.saturating_sub(r);
                        let p1 = (h + PAD - r).min(h);
                        let q0 = PAD.saturating_sub(s);
                        let q1 = (w + PAD - s).min(w);
                        for p in p0..p1 {
                            let ip = p + r - PAD;
                            let yrow = &mut yplane[p * w + q0..p * w + q1];
                            let xrow = &xplane[ip * w + (q0 + s - PAD)..ip * w + (q1 + s - PAD)];
                            for (yv, xv) in yrow.iter_mut().zip(xrow) {
                                *yv += t * xv;
                            }
                        }
                    }
                }
            }
        });
    Ok(y)
}

/// Swaps the two channel axes and rotates the taps by 180 degrees:
/// `out[q][p][r][s] = k[p][q][2-r][2-s]`. Applying it twice is the identity.
fn flip_swap(k: &Tensor) -> Result<Tensor> {
    let (p_dim, q_dim, ..) = k.dims4()?;
    let ks = k.data();
    let mut out = Tensor::zeros(&[q_dim, p_dim, K, K]);
    let os = out.data_mut();
    for p in 0..p_dim {
        for q in 0..q_dim {
            for r in 0..K {
                for s in 0..K {
                    os[((q * p_dim + p) * K + r) * K + s] =
                        ks[((p * q_dim + q) * K + (K - 1 - r)) * K + (K - 1 - s)];
                }
            }
        }
    }
    Ok(out)
}

/// Kernel gradient shared by both layers: for `y = correlate(x, k)` and
/// output gradient `g`, returns `dk (O, A, 3, 3)` where
/// `dk[o][a][r][s] = sum_b,p,q g[b][o][p][q] * x[b][a][p+r-1][q+s-1]`.
fn weight_grad(x: &Tensor, g: &Tensor) -> Result<Tensor> {
    let (b, a, h, w) = x.dims4()?;
    let (gb, o, gh, gw) = g.dims4()?;
    if gb != b || gh != h || gw != w {
        return Err(Error::shape(format!(
            "output gradient {:?} does not match input {:?}",
            g.shape(),
            x.shape()
        )));
    }
    let plane = h * w;
    let xs = x.data();
    let gs = g.data();
    let mut dk = Tensor::zeros(&[o, a, K, K]);

    // One (out-channel, in-channel) tap block per task.
    dk.data_mut()
        .par_chunks_mut(K * K)
        .enumerate()
        .for_each(|(task, taps)| {
            let oc = task / a;
            let ac = task % a;
            for bi in 0..b {
                let gplane = &gs[(bi * o + oc) * plane..(bi * o + oc + 1) * plane];
                let xplane = &xs[(bi * a + ac) * plane..(bi * a + ac + 1) * plane];
                for r in 0..K {
                    for s in 0..K {
                        let p0 = PAD.saturating_sub(r);
                        let p1 = (h + PAD - r).min(h);
                        let q0 = PAD.saturating_sub(s);
                        let q1 = (w + PAD - s).min(w);
                        let mut acc = 0.0;
                        for p in p0..p1 {
                            let ip = p + r - PAD;
                            let grow = &gplane[p * w + q0..p * w + q1];
                            let xrow = &xplane[ip * w + (q0 + s - PAD)..ip * w + (q1 + s - PAD)];
                            for (gv, xv) in grow.iter().zip(xrow) {
                                acc += gv * xv;
                            }
                        }
                        taps[r * K + s] += acc;
                    }
                }
            }
        });
    Ok(dk)
}

/// Convolution forward. `x (B, Cin, H, W)`, `w (Cout, Cin, 3, 3)`, output
/// `(B, Cout, H, W)`.
pub fn conv2d_forward(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    correlate(x, w)
}

/// Convolution backward. Returns the input gradient and the kernel gradient
/// under the name `"w"`.
pub fn conv2d_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<LayerGrad> {
    let input_grad = correlate(grad_out, &flip_swap(w)?)?;
    let dw = weight_grad(x, grad_out)?;
    let mut param_grads = BTreeMap::new();
    param_grads.insert("w".to_string(), dw);
    Ok(LayerGrad { input_grad, param_grads })
}

/// Transposed convolution forward; the adjoint of [`conv2d_forward`] with the
/// same kernel. `x (B, Cin, H, W)`, `w (Cin, Cout, 3, 3)`, output
/// `(B, Cout, H, W)`.
pub fn conv2d_transpose_forward(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    correlate(x, &flip_swap(w)?)
}

/// Transposed convolution backward.
pub fn conv2d_transpose_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<LayerGrad> {
    check_kernel(w, "transposed conv")?;
    let input_grad = correlate(grad_out, w)?;
    // Forward used flip_swap(w) as the correlation kernel, so the raw kernel
    // gradient comes out in that orientation and must be mapped back.
    let dk = weight_grad(x, grad_out)?;
    let dw = flip_swap(&dk)?;
    let mut param_grads = BTreeMap::new();
    param_grads.insert("w".to_string(), dw);
    Ok(LayerGrad { input_grad, param_grads })
}
