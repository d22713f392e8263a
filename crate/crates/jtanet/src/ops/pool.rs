//! 2x2 max pooling with stride 2.

use super::LayerGrad;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Forward result. `argmax` stores, per output element, which of the four
/// window positions won (0 = top-left, 1 = top-right, 2 = bottom-left,
/// 3 = bottom-right); ties go to the earliest position in that scan order.
#[derive(Debug, Clone)]
pub struct MaxPoolForward {
    pub output: Tensor,
    pub argmax: Vec<u8>,
}

pub fn maxpool2x2_forward(x: &Tensor) -> Result<MaxPoolForward> {
    let (b, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "maxpool2x2 needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xs = x.data();
    let mut output = Tensor::zeros(&[b, c, oh, ow]);
    let mut argmax = vec![0u8; b * c * oh * ow];
    let out = output.data_mut();
    for plane_idx in 0..b * c {
        let xplane = &xs[plane_idx * h * w..(plane_idx + 1) * h * w];
        let obase = plane_idx * oh * ow;
        for p in 0..oh {
            for q in 0..ow {
                let corners = [
                    xplane[(2 * p) * w + 2 * q],
                    xplane[(2 * p) * w + 2 * q + 1],
                    xplane[(2 * p + 1) * w + 2 * q],
                    xplane[(2 * p + 1) * w + 2 * q + 1],
                ];
                let mut best = 0usize;
                for k in 1..4 {
                    if corners[k] > corners[best] {
                        best = k;
                    }
                }
                out[obase + p * ow + q] = corners[best];
                argmax[obase + p * ow + q] = best as u8;
            }
        }
    }
    Ok(MaxPoolForward { output, argmax })
}

/// Routes each output gradient to the input position recorded in `argmax`.
pub fn maxpool2x2_backward(
    input_shape: &[usize],
    argmax: &[u8],
    grad_out: &Tensor,
) -> Result<LayerGrad> {
    let [b, c, h, w] = *input_shape else {
        return Err(Error::shape(format!("expected 4-d input shape, got {input_shape:?}")));
    };
    let (oh, ow) = (h / 2, w / 2);
    if grad_out.shape() != [b, c, oh, ow] {
        return Err(Error::shape(format!(
            "maxpool gradient {:?} does not match pooled shape {:?}",
            grad_out.shape(),
            [b, c, oh, ow]
        )));
    }
    if argmax.len() != b * c * oh * ow {
        return Err(Error::shape(format!(
            "argmax length {} does not match {} pooled elements",
            argmax.len(),
            b * c * oh * ow
        )));
    }
    let gs = grad_out.data();
    let mut input_grad = Tensor::zeros(&[b, c, h, w]);
    let dx = input_grad.data_mut();
    for plane_idx in 0..b * c {
        let obase = plane_idx * oh * ow;
        let ibase = plane_idx * h * w;
        for p in 0..oh {
            for q in 0..ow {
                let which = argmax[obase + p * ow + q] as usize;
                let (dr, dc) = (which / 2, which % 2);
                dx[ibase + (2 * p + dr) * w + 2 * q + dc] += gs[obase + p * ow + q];
            }
        }
    }
    Ok(LayerGrad::input_only(input_grad))
}
