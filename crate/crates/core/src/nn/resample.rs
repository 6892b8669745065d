//! Separable bicubic resampling with the Keys kernel (a = -0.5, i.e.
//! Catmull-Rom).
//!
//! Output pixel `i` samples source coordinate `(i + 0.5)·(in/out) − 0.5`
//! with four taps around it; taps outside the image are clamped to the
//! border. No extra prefilter is applied when shrinking. The vertical pass
//! runs first, then the horizontal one.

use std::rc::Rc;

use super::dims4;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const A: f64 = -0.5;

pub fn keys_cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Source indices and weights for each output position along one axis.
pub fn bicubic_weights(in_len: usize, out_len: usize) -> Vec<[(usize, f64); 4]> {
    let ratio = in_len as f64 / out_len as f64;
    let last = in_len as isize - 1;
    (0..out_len)
        .map(|i| {
            let src = (i as f64 + 0.5) * ratio - 0.5;
            let base = src.floor() as isize;
            let mut taps = [(0usize, 0.0f64); 4];
            for (k, tap) in taps.iter_mut().enumerate() {
                let pos = base - 1 + k as isize;
                *tap = (pos.clamp(0, last) as usize, keys_cubic(src - pos as f64));
            }
            taps
        })
        .collect()
}

type Taps<T> = Vec<[(usize, T); 4]>;

fn cast_taps<T: Scalar>(taps: Vec<[(usize, f64); 4]>) -> Taps<T> {
    taps.into_iter()
        .map(|t| t.map(|(i, w)| (i, T::from_f64(w))))
        .collect()
}

fn resample_forward<T: Scalar>(x: &[T], outer: usize, len: usize, inner: usize, taps: &Taps<T>) -> Vec<T> {
    let out_len = taps.len();
    let mut out = vec![T::zero(); outer * out_len * inner];
    for o in 0..outer {
        for (i, tap) in taps.iter().enumerate() {
            let dst = &mut out[(o * out_len + i) * inner..(o * out_len + i + 1) * inner];
            for &(src, w) in tap {
                let row = &x[(o * len + src) * inner..(o * len + src + 1) * inner];
                dst.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + w * v);
            }
        }
    }
    out
}

fn resample_backward<T: Scalar>(g: &[T], outer: usize, len: usize, inner: usize, taps: &Taps<T>) -> Vec<T> {
    let out_len = taps.len();
    let mut gx = vec![T::zero(); outer * len * inner];
    for o in 0..outer {
        for (i, tap) in taps.iter().enumerate() {
            let src_g = &g[(o * out_len + i) * inner..(o * out_len + i + 1) * inner];
            for &(src, w) in tap {
                let dst = &mut gx[(o * len + src) * inner..(o * len + src + 1) * inner];
                dst.iter_mut().zip(src_g).for_each(|(d, &v)| *d = *d + w * v);
            }
        }
    }
    gx
}

fn resample_axis<T: Scalar>(x: &Tensor<T>, axis: usize, out_len: usize) -> Tensor<T> {
    let shape = x.shape().to_vec();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let len = shape[axis];
    let taps = Rc::new(cast_taps::<T>(bicubic_weights(len, out_len)));
    let data = resample_forward(x.data(), outer, len, inner, &taps);
    let mut out_shape = shape;
    out_shape[axis] = out_len;
    Tensor::from_op(data, out_shape, &[x], move |g| {
        vec![Some(resample_backward(g, outer, len, inner, &taps))]
    })
}

/// Resizes a `[B,H,W,C]` map to `[B,out_h,out_w,C]`. Differentiable (the
/// map is linear in its input).
pub fn bicubic_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    dims4(x)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bicubic_resize: output extents must be >= 1"));
    }
    Ok(resample_axis(&resample_axis(x, 1, out_h), 2, out_w))
}

/// Same resampling over a bare `H×W×C` buffer.
pub fn resize_buffer<T: Scalar>(data: &[T], h: usize, w: usize, c: usize, out_h: usize, out_w: usize) -> Vec<T> {
    debug_assert_eq!(data.len(), h * w * c);
    let vt = cast_taps::<T>(bicubic_weights(h, out_h));
    let ht = cast_taps::<T>(bicubic_weights(w, out_w));
    let tmp = resample_forward(data, 1, h, w * c, &vt);
    resample_forward(&tmp, out_h, w, c, &ht)
}
