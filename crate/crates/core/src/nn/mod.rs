//! Building blocks shared by both architectures.
//!
//! Feature maps are `[B, H, W, C]` tensors (batch, height, width, channels),
//! row-major and channels-last. Images are feature maps with 1 or 3
//! channels holding values in `[0, 1]`.

mod layers;
mod resample;

pub use layers::{Conv2d, LayerNorm, Linear, PatchExpanding, PatchMerging};
pub use resample::{bicubic_resize, bicubic_weights, keys_cubic, resize_buffer};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const LN_EPS: f64 = 1e-5;

/// `(B, H, W, C)` of a feature map.
pub fn dims4<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [b, h, w, c] => Ok((b, h, w, c)),
        _ => Err(Error::invalid(format!(
            "expected a [B,H,W,C] feature map, got {:?}",
            x.shape()
        ))),
    }
}

/// `x · W (+ b)` over the last axis; `W` is `[in, out]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let y = x.matmul(weight)?;
    match bias {
        Some(b) => y.add(b),
        None => Ok(y),
    }
}

/// Stride-1 cross-correlation (no kernel flip) with zero padding.
/// `weight` is `[kh, kw, Cin, Cout]`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    padding: usize,
) -> Result<Tensor<T>> {
    let (_, _, _, c) = dims4(x)?;
    let [kh, kw, cin, cout] = *weight.shape() else {
        return Err(Error::invalid(format!(
            "conv2d weight must be [kh,kw,Cin,Cout], got {:?}",
            weight.shape()
        )));
    };
    if cin != c {
        return Err(Error::shape("conv2d channels", x.shape(), weight.shape()));
    }
    let cols = if kh == 1 && kw == 1 && padding == 0 {
        x.clone()
    } else {
        x.im2col(kh, kw, padding)?
    };
    linear(&cols, &weight.reshape(&[kh * kw * cin, cout])?, bias)
}

/// Normalizes over the last axis, then applies `gamma`/`beta`.
pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let c = *x.shape().last().ok_or_else(|| Error::invalid("layer_norm of a rank-0 tensor"))?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape("layer_norm gamma/beta", x.shape(), if gamma.shape() != [c] { gamma.shape() } else { beta.shape() }));
    }
    if c == 0 {
        return Ok(x.clone());
    }
    // Fused, with row statistics in f64: the composed form sums the mean
    // and variance paths separately and loses most f32 digits to
    // cancellation in the backward pass.
    let rows = x.numel() / c;
    let (xd, gd, bd) = (x.data(), gamma.data(), beta.data());
    let mut xhat = vec![0.0f64; xd.len()];
    let mut inv_std = vec![0.0f64; rows];
    let mut out = Vec::with_capacity(xd.len());
    for r in 0..rows {
        let row = &xd[r * c..(r + 1) * c];
        let mu = row.iter().map(|v| v.as_f64()).sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v.as_f64() - mu).powi(2)).sum::<f64>() / c as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for j in 0..c {
            let h = (row[j].as_f64() - mu) * is;
            xhat[r * c + j] = h;
            out.push(T::from_f64(h * gd[j].as_f64() + bd[j].as_f64()));
        }
    }
    let gamma64: Vec<f64> = gd.iter().map(|v| v.as_f64()).collect();
    Ok(Tensor::from_op(out, x.shape().to_vec(), &[x, gamma, beta], move |g| {
        let mut gx = vec![T::zero(); g.len()];
        let mut ggamma = vec![0.0f64; c];
        let mut gbeta = vec![0.0f64; c];
        let mut dh = vec![0.0f64; c];
        for r in 0..rows {
            let (mut mean_dh, mut mean_dh_h) = (0.0, 0.0);
            for j in 0..c {
                let (gj, h) = (g[r * c + j].as_f64(), xhat[r * c + j]);
                ggamma[j] += gj * h;
                gbeta[j] += gj;
                dh[j] = gj * gamma64[j];
                mean_dh += dh[j];
                mean_dh_h += dh[j] * h;
            }
            mean_dh /= c as f64;
            mean_dh_h /= c as f64;
            for j in 0..c {
                let h = xhat[r * c + j];
                gx[r * c + j] = T::from_f64(inv_std[r] * (dh[j] - mean_dh - h * mean_dh_h));
            }
        }
        let cast = |v: Vec<f64>| v.into_iter().map(T::from_f64).collect();
        vec![Some(gx), Some(cast(ggamma)), Some(cast(gbeta))]
    }))
}

/// `[B,H,W,s²C] -> [B,sH,sW,C]`: channel `c·s² + dy·s + dx` at `(h, w)`
/// lands on channel `c` at `(s·h + dy, s·w + dx)`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let (b, h, w, cs) = dims4(x)?;
    if s == 0 || cs % (s * s) != 0 {
        return Err(Error::invalid(format!(
            "pixel_shuffle: {cs} channels not divisible by {s}²"
        )));
    }
    if s == 1 {
        return Ok(x.clone());
    }
    let c = cs / (s * s);
    x.reshape(&[b, h, w, c, s, s])?
        .permute(&[0, 1, 4, 2, 5, 3])?
        .reshape(&[b, h * s, w * s, c])
}

/// `[B,H,W,C] -> [B·(H/m)·(W/m), m², C]`, tiles in row-major order and
/// positions row-major inside each tile.
pub fn window_partition<T: Scalar>(x: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    let (b, h, w, c) = dims4(x)?;
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(Error::invalid(format!(
            "window_partition: window {m} does not tile {h}x{w}"
        )));
    }
    x.reshape(&[b, h / m, m, w / m, m, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b * (h / m) * (w / m), m * m, c])
}

/// Inverse of [`window_partition`].
pub fn window_reverse<T: Scalar>(windows: &Tensor<T>, m: usize, b: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let c = *windows.shape().last().unwrap_or(&0);
    if m == 0 || h % m != 0 || w % m != 0 || windows.numel() != b * h * w * c {
        return Err(Error::shape("window_reverse", windows.shape(), &[b, h, w, c]));
    }
    windows
        .reshape(&[b, h / m, w / m, m, m, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b, h, w, c])
}

/// Cyclic shift of a feature map by `(dy, dx)` pixels.
pub fn cyclic_shift<T: Scalar>(x: &Tensor<T>, dy: isize, dx: isize) -> Result<Tensor<T>> {
    dims4(x)?;
    x.roll(1, dy)?.roll(2, dx)
}

/// Gathers each 2×2 neighborhood into `4C` channels in the order
/// top-left, bottom-left, top-right, bottom-right.
pub fn patch_gather<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, h, w, c) = dims4(x)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!("patch merge needs even extents, got {h}x{w}")));
    }
    x.reshape(&[b, h / 2, 2, w / 2, 2, c])?
        .permute(&[0, 1, 3, 4, 2, 5])?
        .reshape(&[b, h / 2, w / 2, 4 * c])
}

/// 2× downsampling: gather, LayerNorm over `4C`, bias-free `4C -> 2C`.
pub fn patch_merge<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    reduction: &Tensor<T>,
) -> Result<Tensor<T>> {
    let gathered = patch_gather(x)?;
    let normed = layer_norm(&gathered, gamma, beta, LN_EPS)?;
    linear(&normed, reduction, None)
}

/// 2× upsampling: bias-free `C -> 2C` followed by a 2× pixel shuffle,
/// giving `C/2` channels.
pub fn patch_expand<T: Scalar>(x: &Tensor<T>, expansion: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, _, c) = dims4(x)?;
    if c % 2 != 0 {
        return Err(Error::invalid(format!("patch expand needs an even channel count, got {c}")));
    }
    pixel_shuffle(&linear(x, expansion, None)?, 2)
}

/// Mean absolute error over every element.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("l1_loss", pred.shape(), target.shape()));
    }
    Ok(pred.sub(target)?.abs().mean())
}

/// Mean binary cross-entropy of logits against a constant label.
pub fn bce_with_logits<T: Scalar>(logits: &Tensor<T>, label: f64) -> Tensor<T> {
    // softplus(z) - y·z
    let sp = logits.softplus();
    if label == 0.0 {
        sp.mean()
    } else {
        let yz = logits.mul_scalar(label);
        sp.sub(&yz).expect("same shape").mean()
    }
}

#[cfg(test)]
mod tests;
