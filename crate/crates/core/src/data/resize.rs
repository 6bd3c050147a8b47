//! Resampling. Images use bilinear interpolation with half-pixel centres
//! (edge-clamped); masks use nearest neighbour so they stay binary.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::sample::Sample;

/// Source coordinate and weights for one output coordinate.
fn bilinear_taps(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f32) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let lo = (src.floor() as usize).min(in_len - 1);
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, (src - lo as f64) as f32)
}

fn nearest(dst: usize, in_len: usize, out_len: usize) -> usize {
    let scale = in_len as f64 / out_len as f64;
    (((dst as f64 + 0.5) * scale).floor() as usize).min(in_len - 1)
}

/// Bilinear resize of every channel plane of `x` to `out_h×out_w`.
pub fn resize_bilinear_tensor(x: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidParameter("resize target must be non-empty".into()));
    }
    let s = x.shape();
    if (s.h, s.w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let rows: Vec<_> = (0..out_h).map(|y| bilinear_taps(y, s.h, out_h)).collect();
    let cols: Vec<_> = (0..out_w).map(|c| bilinear_taps(c, s.w, out_w)).collect();
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, out_h, out_w));
    for (src, dst) in x
        .data()
        .chunks_exact(s.plane())
        .zip(out.data_mut().chunks_exact_mut(out_h * out_w))
    {
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                let a = src[y0 * s.w + x0];
                let b = src[y0 * s.w + x1];
                let c = src[y1 * s.w + x0];
                let d = src[y1 * s.w + x1];
                let top = a + (b - a) * fx;
                let bottom = c + (d - c) * fx;
                dst[oy * out_w + ox] = top + (bottom - top) * fy;
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour resize of every channel plane of `x`.
pub fn resize_nearest_tensor(x: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidParameter("resize target must be non-empty".into()));
    }
    let s = x.shape();
    if (s.h, s.w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let rows: Vec<_> = (0..out_h).map(|y| nearest(y, s.h, out_h)).collect();
    let cols: Vec<_> = (0..out_w).map(|c| nearest(c, s.w, out_w)).collect();
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, out_h, out_w));
    for (src, dst) in x
        .data()
        .chunks_exact(s.plane())
        .zip(out.data_mut().chunks_exact_mut(out_h * out_w))
    {
        for (oy, &y) in rows.iter().enumerate() {
            for (ox, &c) in cols.iter().enumerate() {
                dst[oy * out_w + ox] = src[y * s.w + c];
            }
        }
    }
    Ok(out)
}

/// Resizes a sample: bilinear image, nearest-neighbour mask re-binarized at 0.5.
pub fn resize_sample(s: &Sample, out_h: usize, out_w: usize) -> Result<Sample> {
    let image = resize_bilinear_tensor(&s.image, out_h, out_w)?;
    let mask = resize_nearest_tensor(&s.mask, out_h, out_w)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    Ok(Sample {
        image,
        mask,
        ..s.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_stays_constant() {
        let x = Tensor::full(Shape::new(1, 3, 7, 5), 0.3f32);
        let y = resize_bilinear_tensor(&x, 16, 9).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-7));
    }

    #[test]
    fn zero_target_is_an_error() {
        let x = Tensor::full(Shape::new(1, 1, 4, 4), 1.0f32);
        assert!(resize_bilinear_tensor(&x, 0, 4).is_err());
        assert!(resize_nearest_tensor(&x, 4, 0).is_err());
    }

    #[test]
    fn nearest_keeps_values_from_the_input() {
        let x = Tensor::from_fn(Shape::new(1, 1, 5, 3), |_, _, h, w| (h * 3 + w) as f32);
        let y = resize_nearest_tensor(&x, 9, 8).unwrap();
        assert!(y.data().iter().all(|v| x.data().contains(v)));
    }
}
