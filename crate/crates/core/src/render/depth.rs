//! Conversion of depth maps into three-channel extractor input.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

fn min_max<S: Scalar>(depth: &Image<S>) -> Result<(usize, usize)> {
    if depth.channels != 1 || depth.data.is_empty() {
        return Err(Error::invalid("depth image must be a non-empty single-channel image"));
    }
    if depth.data.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("depth values must be finite"));
    }
    let mut lo = 0;
    let mut hi = 0;
    for (i, &d) in depth.data.iter().enumerate() {
        if d < depth.data[lo] {
            lo = i;
        }
        if d > depth.data[hi] {
            hi = i;
        }
    }
    Ok((lo, hi))
}

/// Min-max normalizes a depth map to `[0, 1]` and replicates it into three
/// identical channels. A constant map becomes 0.5 everywhere.
pub fn render_depth_style_input<S: Scalar>(depth: &Image<S>) -> Result<Image<S>> {
    let (lo, hi) = min_max(depth)?;
    let (a, b) = (depth.data[lo], depth.data[hi]);
    let mut out = Image::new(depth.width, depth.height, 3);
    let range = b - a;
    for (i, &d) in depth.data.iter().enumerate() {
        let v = if range > S::zero() { (d - a) / range } else { S::lit(0.5) };
        out.data[3 * i..3 * i + 3].fill(v);
    }
    Ok(out)
}

/// Gradient of [`render_depth_style_input`] with respect to the depth map,
/// including the dependence of the normalization on the extreme pixels.
pub fn depth_style_input_backward<S: Scalar>(depth: &Image<S>, grad: &Image<S>) -> Result<Image<S>> {
    if grad.width != depth.width || grad.height != depth.height || grad.channels != 3 {
        return Err(Error::invalid("gradient must be a three-channel image of the depth size"));
    }
    let (lo, hi) = min_max(depth)?;
    let (a, b) = (depth.data[lo], depth.data[hi]);
    let mut out = Image::new(depth.width, depth.height, 1);
    let range = b - a;
    if !(range > S::zero()) {
        return Ok(out);
    }
    let inv = S::one() / range;
    let inv2 = inv * inv;
    let mut d_a = S::zero();
    let mut d_b = S::zero();
    for (i, &d) in depth.data.iter().enumerate() {
        let g = grad.data[3 * i] + grad.data[3 * i + 1] + grad.data[3 * i + 2];
        out.data[i] += g * inv;
        d_a += g * (d - b) * inv2;
        d_b -= g * (d - a) * inv2;
    }
    out.data[lo] += d_a;
    out.data[hi] += d_b;
    Ok(out)
}
