//! Window multi-head self-attention in four flavors: regular or shifted
//! windows, at full or half window size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cyclic_shift, dims4, linear, window_partition, window_reverse};
use crate::params::{Init, ParamBuilder, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Additive logit for forbidden (cross-region) pairs.
pub const MASK_VALUE: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsaConfig {
    pub channels: usize,
    pub heads: usize,
    /// Base window size before halving and clamping.
    pub window: usize,
    pub shifted: bool,
    pub half: bool,
}

impl MsaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.channels == 0 || self.channels % self.heads != 0 {
            return Err(Error::invalid(format!(
                "{} channels are not divisible into {} heads",
                self.channels, self.heads
            )));
        }
        if self.nominal_window() == 0 {
            return Err(Error::invalid(format!(
                "window {} leaves no pixels (half = {})",
                self.window, self.half
            )));
        }
        Ok(())
    }

    /// Window size of this variant before clamping to the map.
    pub fn nominal_window(&self) -> usize {
        if self.half {
            self.window / 2
        } else {
            self.window
        }
    }

    /// Window actually used on an `h×w` map.
    pub fn effective_window(&self, h: usize, w: usize) -> usize {
        self.nominal_window().min(h).min(w)
    }

    pub fn shift_for(&self, m: usize) -> usize {
        if self.shifted {
            m / 2
        } else {
            0
        }
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// Checks that the clamped window tiles an `h×w` map.
    pub fn check_extent(&self, h: usize, w: usize) -> Result<usize> {
        let m = self.effective_window(h, w);
        if m == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::invalid(format!(
                "window {m} does not tile a {h}x{w} feature map"
            )));
        }
        Ok(m)
    }
}

/// Borrowed weights of one attention block. Projections are `[C, C]`
/// (`x · W`), the relative bias table is `[(2M-1)², heads]` for the
/// block's nominal window `M`.
#[derive(Clone, Copy)]
pub struct MsaWeights<'a, T: Scalar> {
    pub wq: &'a Tensor<T>,
    pub bq: &'a Tensor<T>,
    pub wk: &'a Tensor<T>,
    pub bk: &'a Tensor<T>,
    pub wv: &'a Tensor<T>,
    pub bv: &'a Tensor<T>,
    pub wo: &'a Tensor<T>,
    pub bo: &'a Tensor<T>,
    pub rel_bias: &'a Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
#[derive(Default)]
pub struct MsaOptions {
    /// Skips the region mask of shifted variants.
    pub disable_mask: bool,
    /// Returns the post-softmax attention as `[B·nW, heads, m², m²]`.
    pub record_attention: bool,
}


pub struct MsaOutput<T: Scalar> {
    pub output: Tensor<T>,
    pub attention: Option<Tensor<T>>,
}

/// Relative position index of every `(i, j)` pair in an `m×m` window,
/// flattened row-major, into a table laid out for window `table_m ≥ m`.
pub fn rel_bias_index_in(m: usize, table_m: usize) -> Vec<usize> {
    debug_assert!(m <= table_m);
    let n = m * m;
    let side = 2 * table_m - 1;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        let (yi, xi) = (i / m, i % m);
        for j in 0..n {
            let (yj, xj) = (j / m, j % m);
            let dy = yi + table_m - 1 - yj;
            let dx = xi + table_m - 1 - xj;
            idx.push(dy * side + dx);
        }
    }
    idx
}

/// `[m², m²]` index map into a `(2m-1)²` table.
pub fn rel_bias_index(m: usize) -> Vec<usize> {
    rel_bias_index_in(m, m)
}

/// Region id of each row or column after a cyclic shift by `shift`:
/// 0 for the bulk, 1 for the strip of width `m - shift` before the wrapped
/// tail, 2 for the wrapped tail.
fn region_of(pos: usize, len: usize, m: usize, shift: usize) -> usize {
    if pos < len - m {
        0
    } else if pos < len - shift {
        1
    } else {
        2
    }
}

/// `[nW, m², m²]` mask (row-major `nW = (h/m)·(w/m)`) with `0` where both
/// positions come from the same pre-shift region and `MASK_VALUE` elsewhere.
pub fn build_shift_mask(h: usize, w: usize, m: usize, shift: usize) -> Vec<f64> {
    let n = m * m;
    let (nh, nw) = (h / m, w / m);
    let mut mask = vec![0.0; nh * nw * n * n];
    if shift == 0 {
        return mask;
    }
    for wy in 0..nh {
        for wx in 0..nw {
            let base = (wy * nw + wx) * n * n;
            let label = |p: usize| {
                let y = wy * m + p / m;
                let x = wx * m + p % m;
                region_of(y, h, m, shift) * 3 + region_of(x, w, m, shift)
            };
            for i in 0..n {
                let li = label(i);
                for j in 0..n {
                    if label(j) != li {
                        mask[base + i * n + j] = MASK_VALUE;
                    }
                }
            }
        }
    }
    mask
}

/// Attention of one variant over a `[B,H,W,C]` map.
pub fn msa_forward<T: Scalar>(x: &Tensor<T>, cfg: &MsaConfig, p: &MsaWeights<'_, T>) -> Result<Tensor<T>> {
    Ok(msa_forward_with(x, cfg, p, MsaOptions::default())?.output)
}

pub fn msa_forward_with<T: Scalar>(
    x: &Tensor<T>,
    cfg: &MsaConfig,
    p: &MsaWeights<'_, T>,
    opts: MsaOptions,
) -> Result<MsaOutput<T>> {
    cfg.validate()?;
    let (b, h, w, c) = dims4(x)?;
    if c != cfg.channels {
        return Err(Error::shape("attention channels", x.shape(), &[cfg.channels]));
    }
    let m = cfg.check_extent(h, w)?;
    let table_m = cfg.nominal_window();
    let shift = cfg.shift_for(m);
    let heads = cfg.heads;
    let d = cfg.head_dim();
    let n = m * m;
    let n_win = (h / m) * (w / m);
    let bw = b * n_win;

    let shifted = if shift > 0 {
        cyclic_shift(x, -(shift as isize), -(shift as isize))?
    } else {
        x.clone()
    };
    let win = window_partition(&shifted, m)?;

    let split = |t: Tensor<T>| -> Result<Tensor<T>> { t.reshape(&[bw, n, heads, d])?.permute(&[0, 2, 1, 3]) };
    let q = split(linear(&win, p.wq, Some(p.bq))?)?;
    let k = split(linear(&win, p.wk, Some(p.bk))?)?;
    let v = split(linear(&win, p.wv, Some(p.bv))?)?;

    let scale = 1.0 / (d as f64).sqrt();
    let mut logits = q.matmul(&k.transpose_last()?)?.mul_scalar(scale);

    let bias = p
        .rel_bias
        .index_select(&rel_bias_index_in(m, table_m))?
        .reshape(&[n, n, heads])?
        .permute(&[2, 0, 1])?;
    logits = logits.add(&bias)?;

    if shift > 0 && !opts.disable_mask {
        let mask = Tensor::from_f64s(&build_shift_mask(h, w, m, shift), &[1, n_win, 1, n, n])?;
        logits = logits
            .reshape(&[b, n_win, heads, n, n])?
            .add(&mask)?
            .reshape(&[bw, heads, n, n])?;
    }
    let attn = logits.softmax(3)?;
    let mixed = attn
        .matmul(&v)?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[bw, n, c])?;
    let projected = linear(&mixed, p.wo, Some(p.bo))?;
    let merged = window_reverse(&projected, m, b, h, w)?;
    let output = if shift > 0 {
        cyclic_shift(&merged, shift as isize, shift as isize)?
    } else {
        merged
    };
    Ok(MsaOutput {
        output,
        attention: opts.record_attention.then_some(attn),
    })
}

/// Registered parameters of one attention block.
#[derive(Debug, Clone)]
pub struct WindowAttention {
    pub cfg: MsaConfig,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub rel_bias: ParamId,
}

impl WindowAttention {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, cfg: MsaConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let side = 2 * cfg.nominal_window() - 1;
        let mut proj = |tag: &str| -> Result<(ParamId, ParamId)> {
            Ok((
                b.add(format!("{name}.{tag}.weight"), &[c, c], Init::DEFAULT_WEIGHT)?,
                b.add(format!("{name}.{tag}.bias"), &[c], Init::Zeros)?,
            ))
        };
        let (wq, bq) = proj("q")?;
        let (wk, bk) = proj("k")?;
        let (wv, bv) = proj("v")?;
        let (wo, bo) = proj("proj")?;
        let rel_bias = b.add(
            format!("{name}.rel_bias"),
            &[side * side, cfg.heads],
            Init::DEFAULT_WEIGHT,
        )?;
        Ok(Self {
            cfg,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            rel_bias,
        })
    }

    pub fn weights<'a, T: Scalar>(&self, ps: &'a ParamStore<T>) -> MsaWeights<'a, T> {
        MsaWeights {
            wq: ps.get(self.wq),
            bq: ps.get(self.bq),
            wk: ps.get(self.wk),
            bk: ps.get(self.bk),
            wv: ps.get(self.wv),
            bv: ps.get(self.bv),
            wo: ps.get(self.wo),
            bo: ps.get(self.bo),
            rel_bias: ps.get(self.rel_bias),
        }
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        msa_forward(x, &self.cfg, &self.weights(ps))
    }

    pub fn forward_with<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>, opts: MsaOptions) -> Result<MsaOutput<T>> {
        msa_forward_with(x, &self.cfg, &self.weights(ps), opts)
    }

    pub fn num_params(&self) -> usize {
        let c = self.cfg.channels;
        let side = 2 * self.cfg.nominal_window() - 1;
        4 * (c * c + c) + side * side * self.cfg.heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_small_windows() {
        assert_eq!(rel_bias_index(1), vec![0]);
        let idx = rel_bias_index(2);
        assert_eq!(idx.len(), 16);
        for i in 0..4 {
            assert_eq!(idx[i * 4 + i], 4);
        }
        let mut distinct = idx.clone();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct.len(), 9);
    }

    #[test]
    fn zero_shift_mask_is_empty() {
        assert!(build_shift_mask(8, 8, 4, 0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mask_is_symmetric() {
        let (m, n) = (4, 16);
        let mask = build_shift_mask(8, 12, m, 2);
        for win in 0..6 {
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(mask[(win * n + i) * n + j], mask[(win * n + j) * n + i]);
                }
            }
        }
    }

    #[test]
    fn variant_windows() {
        let cfg = MsaConfig {
            channels: 12,
            heads: 3,
            window: 8,
            shifted: true,
            half: true,
        };
        assert_eq!(cfg.nominal_window(), 4);
        assert_eq!(cfg.effective_window(16, 16), 4);
        assert_eq!(cfg.shift_for(4), 2);
        assert_eq!(cfg.effective_window(2, 4), 2);
        assert!(MsaConfig { heads: 5, ..cfg }.validate().is_err());
        assert!(MsaConfig { window: 1, ..cfg }.validate().is_err());
        assert!(cfg.check_extent(6, 8).is_err());
    }
}
