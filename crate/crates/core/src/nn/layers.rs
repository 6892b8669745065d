use super::{conv2d, layer_norm, linear, patch_expand, patch_merge, LN_EPS};
use crate::error::Result;
use crate::params::{Init, ParamBuilder, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        with_bias: bool,
    ) -> Result<Self> {
        let weight = b.add(format!("{name}.weight"), &[in_features, out_features], Init::DEFAULT_WEIGHT)?;
        let bias = if with_bias {
            Some(b.add(format!("{name}.bias"), &[out_features], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_features,
            out_features,
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        linear(x, ps.get(self.weight), self.bias.map(|b| ps.get(b)))
    }

    pub fn num_params(&self) -> usize {
        self.in_features * self.out_features + if self.bias.is_some() { self.out_features } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    /// Square kernel with "same" zero padding.
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        init: Init,
    ) -> Result<Self> {
        let weight = b.add(format!("{name}.weight"), &[kernel, kernel, in_channels, out_channels], init)?;
        let bias = b.add(format!("{name}.bias"), &[out_channels], Init::Zeros)?;
        Ok(Self {
            weight,
            bias,
            kernel,
            in_channels,
            out_channels,
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, ps.get(self.weight), Some(ps.get(self.bias)), self.kernel / 2)
    }

    pub fn num_params(&self) -> usize {
        self.kernel * self.kernel * self.in_channels * self.out_channels + self.out_channels
    }

    pub fn multiadds(&self, h: usize, w: usize) -> u64 {
        (self.kernel * self.kernel * self.in_channels * self.out_channels * h * w) as u64
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: b.add(format!("{name}.gamma"), &[dim], Init::Ones)?,
            beta: b.add(format!("{name}.beta"), &[dim], Init::Zeros)?,
            dim,
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        layer_norm(x, ps.get(self.gamma), ps.get(self.beta), LN_EPS)
    }

    pub fn num_params(&self) -> usize {
        2 * self.dim
    }
}

/// `[B,H,W,C] -> [B,H/2,W/2,2C]`.
#[derive(Debug, Clone)]
pub struct PatchMerging {
    pub norm: LayerNorm,
    pub reduction: ParamId,
    pub channels: usize,
}

impl PatchMerging {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(b, &format!("{name}.norm"), 4 * channels)?,
            reduction: b.add(
                format!("{name}.reduction"),
                &[4 * channels, 2 * channels],
                Init::DEFAULT_WEIGHT,
            )?,
            channels,
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        patch_merge(
            x,
            ps.get(self.norm.gamma),
            ps.get(self.norm.beta),
            ps.get(self.reduction),
        )
    }

    pub fn num_params(&self) -> usize {
        self.norm.num_params() + 8 * self.channels * self.channels
    }
}

/// `[B,H,W,C] -> [B,2H,2W,C/2]`.
#[derive(Debug, Clone)]
pub struct PatchExpanding {
    pub expansion: ParamId,
    pub channels: usize,
}

impl PatchExpanding {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            expansion: b.add(
                format!("{name}.expansion"),
                &[channels, 2 * channels],
                Init::DEFAULT_WEIGHT,
            )?,
            channels,
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        patch_expand(x, ps.get(self.expansion))
    }

    pub fn num_params(&self) -> usize {
        2 * self.channels * self.channels
    }
}
