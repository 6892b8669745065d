use super::Image;
use crate::error::{Error, Result};

fn same_shape(a: &Image, b: &Image, op: &'static str) -> Result<()> {
    let (sa, sb) = ([a.height, a.width, a.channels], [b.height, b.width, b.channels]);
    if sa != sb {
        return Err(Error::shape(op, &sa, &sb));
    }
    Ok(())
}

/// Mean squared error over every sample, accumulated in f64.
pub fn mse(a: &[f32], b: &[f32]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    sum / a.len() as f64
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical inputs.
pub fn psnr(a: &Image, b: &Image, max_val: f64) -> Result<f64> {
    same_shape(a, b, "psnr")?;
    Ok(psnr_from_mse(mse(&a.data, &b.data), max_val))
}

pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Per-pixel mean over channels.
fn grayscale(img: &Image) -> Vec<f64> {
    img.data
        .chunks(img.channels)
        .map(|px| px.iter().map(|&v| v as f64).sum::<f64>() / img.channels as f64)
        .collect()
}

/// Mean structural similarity of the channel-averaged images over every
/// fully contained 11×11 Gaussian window (σ = 1.5, dynamic range 1).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b, "ssim")?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.width, a.height
        )));
    }
    let (x, y) = (grayscale(a), grayscale(b));
    let g = gaussian_window();
    let (w, h) = (a.width, a.height);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..=h - SSIM_WINDOW {
        for ox in 0..=w - SSIM_WINDOW {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (dy, gy) in g.iter().enumerate() {
                let row = (oy + dy) * w + ox;
                for (dx, gx) in g.iter().enumerate() {
                    let wgt = gy * gx;
                    let (p, q) = (x[row + dx], y[row + dx]);
                    mx += wgt * p;
                    my += wgt * q;
                    sxx += wgt * p * p;
                    syy += wgt * q * q;
                    sxy += wgt * p * q;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}
