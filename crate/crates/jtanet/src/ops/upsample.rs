//! Bilinear 2x upsampling with the half-pixel (align_corners = false)
//! convention: output index `i` samples source coordinate
//! `(i + 0.5) / 2 - 0.5`, clamped to the valid range.

use super::LayerGrad;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per output index: the two source indices and the weight of the upper one.
/// Shared with the dataset resizer, which uses arbitrary in/out lengths.
pub(crate) fn lerp_table(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (s.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

pub fn upsample_bilinear2x_forward(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let rows = lerp_table(oh, h);
    let cols = lerp_table(ow, w);
    let xs = x.data();
    let mut y = Tensor::zeros(&[b, c, oh, ow]);
    let ys = y.data_mut();
    for plane_idx in 0..b * c {
        let xp = &xs[plane_idx * h * w..(plane_idx + 1) * h * w];
        let yp = &mut ys[plane_idx * oh * ow..(plane_idx + 1) * oh * ow];
        for (i, &(ry0, ry1, ty)) in rows.iter().enumerate() {
            for (j, &(rx0, rx1, tx)) in cols.iter().enumerate() {
                let top = (1.0 - tx) * xp[ry0 * w + rx0] + tx * xp[ry0 * w + rx1];
                let bot = (1.0 - tx) * xp[ry1 * w + rx0] + tx * xp[ry1 * w + rx1];
                yp[i * ow + j] = (1.0 - ty) * top + ty * bot;
            }
        }
    }
    Ok(y)
}

/// Adjoint of the forward interpolation: every output gradient is scattered
/// to the (up to four) source pixels it read, with the same weights.
pub fn upsample_bilinear2x_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<LayerGrad> {
    let [b, c, h, w] = *input_shape else {
        return Err(Error::shape(format!("expected 4-d input shape, got {input_shape:?}")));
    };
    let (oh, ow) = (2 * h, 2 * w);
    if grad_out.shape() != [b, c, oh, ow] {
        return Err(Error::shape(format!(
            "upsample gradient {:?} does not match output shape {:?}",
            grad_out.shape(),
            [b, c, oh, ow]
        )));
    }
    let rows = lerp_table(oh, h);
    let cols = lerp_table(ow, w);
    let gs = grad_out.data();
    let mut input_grad = Tensor::zeros(&[b, c, h, w]);
    let dx = input_grad.data_mut();
    for plane_idx in 0..b * c {
        let gp = &gs[plane_idx * oh * ow..(plane_idx + 1) * oh * ow];
        let dp = &mut dx[plane_idx * h * w..(plane_idx + 1) * h * w];
        for (i, &(ry0, ry1, ty)) in rows.iter().enumerate() {
            for (j, &(rx0, rx1, tx)) in cols.iter().enumerate() {
                let g = gp[i * ow + j];
                dp[ry0 * w + rx0] += (1.0 - ty) * (1.0 - tx) * g;
                dp[ry0 * w + rx1] += (1.0 - ty) * tx * g;
                dp[ry1 * w + rx0] += ty * (1.0 - tx) * g;
                dp[ry1 * w + rx1] += ty * tx * g;
            }
        }
    }
    Ok(LayerGrad::input_only(input_grad))
}
