//! Bilinear resampling of single-channel planes, used when ingesting source
//! crops (32x32 -> 64x64) and when preparing query images. Shares the
//! half-pixel sampling tables with the network's upsampling layer, so a 2x
//! resize here and the layer produce identical values.

use crate::error::{Error, Result};
use crate::ops;

pub fn resize_bilinear(
    src: &[f64],
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<f64>> {
    if in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize dimensions must be positive".to_string()));
    }
    if src.len() != in_h * in_w {
        return Err(Error::shape(format!(
            "plane of {} values is not {in_h}x{in_w}",
            src.len()
        )));
    }
    let rows = ops::lerp_table(out_h, in_h);
    let cols = ops::lerp_table(out_w, in_w);
    let mut out = vec![0.0; out_h * out_w];
    for (i, &(ry0, ry1, ty)) in rows.iter().enumerate() {
        for (j, &(rx0, rx1, tx)) in cols.iter().enumerate() {
            let top = (1.0 - tx) * src[ry0 * in_w + rx0] + tx * src[ry0 * in_w + rx1];
            let bot = (1.0 - tx) * src[ry1 * in_w + rx0] + tx * src[ry1 * in_w + rx1];
            out[i * out_w + j] = (1.0 - ty) * top + ty * bot;
        }
    }
    Ok(out)
}
