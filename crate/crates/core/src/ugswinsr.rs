//! UGSwinSR: a U-shaped Swin generator that predicts a residual on top of
//! bicubic upsampling, and a Swin discriminator for adversarial training.

use serde::{Deserialize, Serialize};

use crate::attention::{MsaConfig, WindowAttention};
use crate::error::{Error, Result};
use crate::mswinsr::SrModel;
use crate::nn::{bce_with_logits, bicubic_resize, dims4, l1_loss, pixel_shuffle, Conv2d, LayerNorm, Linear};
use crate::nn::{PatchExpanding, PatchMerging};
use crate::params::{Init, ParamBuilder, ParamStore};
use crate::rng::{stream, Stream};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UgswinConfig {
    pub channels: usize,
    /// Number of 2× downsamplings in the encoder.
    pub depth: usize,
    pub window: usize,
    pub scale: usize,
    /// Heads at the first level; doubled with the channels at every level.
    pub heads: usize,
    /// Swin blocks per level, alternating regular and shifted windows.
    pub blocks_per_level: usize,
    pub mlp_ratio: usize,
    pub in_channels: usize,
    pub disc_channels: usize,
    pub disc_heads: usize,
}

impl Default for UgswinConfig {
    fn default() -> Self {
        Self {
            channels: 60,
            depth: 4,
            window: 8,
            scale: 4,
            heads: 6,
            blocks_per_level: 2,
            mlp_ratio: 4,
            in_channels: 3,
            disc_channels: 16,
            disc_heads: 2,
        }
    }
}

impl UgswinConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(2..=4).contains(&self.scale) {
            return bad(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.blocks_per_level == 0 || self.mlp_ratio == 0 || self.window == 0 || self.in_channels == 0 {
            return bad("blocks_per_level, mlp_ratio, window and in_channels must be positive".into());
        }
        for (c, h, what) in [
            (self.channels, self.heads, "channels/heads"),
            (self.disc_channels, self.disc_heads, "disc_channels/disc_heads"),
        ] {
            if h == 0 || c == 0 || c % h != 0 {
                return bad(format!("{what}: {c} channels are not divisible into {h} heads"));
            }
        }
        Ok(())
    }

    fn msa(channels: usize, heads: usize, window: usize, shifted: bool) -> MsaConfig {
        MsaConfig {
            channels,
            heads,
            window,
            shifted,
            half: false,
        }
    }

    pub fn level_channels(&self, k: usize) -> usize {
        self.channels << k
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let f = 1usize << self.depth;
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::invalid(format!(
                "input {h}x{w} is not divisible by 2^{} = {f}",
                self.depth
            )));
        }
        for k in 0..=self.depth {
            Self::msa(self.channels, self.heads, self.window, false).check_extent(h >> k, w >> k)?;
        }
        Ok(())
    }
}

/// Pre-norm Swin transformer layer: attention then MLP, each residual.
#[derive(Debug, Clone)]
pub struct SwinBlock {
    pub norm1: LayerNorm,
    pub attn: WindowAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl SwinBlock {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, msa: MsaConfig, mlp_ratio: usize) -> Result<Self> {
        let c = msa.channels;
        Ok(Self {
            norm1: LayerNorm::new(b, &format!("{name}.norm1"), c)?,
            attn: WindowAttention::new(b, &format!("{name}.attn"), msa)?,
            norm2: LayerNorm::new(b, &format!("{name}.norm2"), c)?,
            fc1: Linear::new(b, &format!("{name}.fc1"), c, mlp_ratio * c, true)?,
            fc2: Linear::new(b, &format!("{name}.fc2"), mlp_ratio * c, c, true)?,
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let x = x.add(&self.attn.forward(ps, &self.norm1.forward(ps, x)?)?)?;
        let hidden = self.fc1.forward(ps, &self.norm2.forward(ps, &x)?)?.gelu();
        x.add(&self.fc2.forward(ps, &hidden)?)
    }

    pub fn num_params(&self) -> usize {
        self.norm1.num_params()
            + self.attn.num_params()
            + self.norm2.num_params()
            + self.fc1.num_params()
            + self.fc2.num_params()
    }
}

/// Blocks of one resolution level, alternating regular and shifted windows.
#[derive(Debug, Clone)]
pub struct SwinLevel {
    pub blocks: Vec<SwinBlock>,
}

impl SwinLevel {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        channels: usize,
        heads: usize,
        window: usize,
        count: usize,
        mlp_ratio: usize,
    ) -> Result<Self> {
        let blocks = (0..count)
            .map(|i| {
                let msa = UgswinConfig::msa(channels, heads, window, i % 2 == 1);
                SwinBlock::new(b, &format!("{name}.{i}"), msa, mlp_ratio)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks })
    }

    fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = x.clone();
        for blk in &self.blocks {
            y = blk.forward(ps, &y)?;
        }
        Ok(y)
    }

    fn num_params(&self) -> usize {
        self.blocks.iter().map(|b| b.num_params()).sum()
    }

    fn num_msa(&self) -> usize {
        self.blocks.len()
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLevel {
    pub expand: PatchExpanding,
    pub fuse: Linear,
    pub level: SwinLevel,
}

/// Feature-map shapes seen during one generator pass.
#[derive(Debug, Clone, Default)]
pub struct GeneratorTrace {
    /// Encoder outputs kept as skips, level 0 first.
    pub skips: Vec<Vec<usize>>,
    pub bottleneck: Vec<usize>,
    /// Upsampled decoder maps right before concatenation, level 0 first.
    pub expanded: Vec<Vec<usize>>,
}

pub struct Generator<T: Scalar> {
    pub cfg: UgswinConfig,
    pub params: ParamStore<T>,
    pub embed: Conv2d,
    pub encoder: Vec<(SwinLevel, PatchMerging)>,
    pub bottleneck: SwinLevel,
    /// Level 0 first; run in reverse.
    pub decoder: Vec<DecoderLevel>,
    pub head: Conv2d,
}

impl<T: Scalar> Generator<T> {
    pub fn new(cfg: UgswinConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut rng = stream(seed, Stream::Init);
        let mut b = ParamBuilder::new(&mut params, &mut rng);
        let c = cfg.channels;
        let (bpl, r, m) = (cfg.blocks_per_level, cfg.mlp_ratio, cfg.window);
        let embed = Conv2d::new(&mut b, "embed", 3, cfg.in_channels, c, Init::DEFAULT_WEIGHT)?;
        let mut encoder = Vec::with_capacity(cfg.depth);
        for k in 0..cfg.depth {
            let ck = cfg.level_channels(k);
            let level = SwinLevel::new(&mut b, &format!("enc.{k}"), ck, cfg.heads << k, m, bpl, r)?;
            let merge = PatchMerging::new(&mut b, &format!("enc.{k}.merge"), ck)?;
            encoder.push((level, merge));
        }
        let d = cfg.depth;
        let bottleneck = SwinLevel::new(&mut b, "bottleneck", cfg.level_channels(d), cfg.heads << d, m, bpl, r)?;
        let mut decoder = Vec::with_capacity(d);
        for k in 0..d {
            let ck = cfg.level_channels(k);
            decoder.push(DecoderLevel {
                expand: PatchExpanding::new(&mut b, &format!("dec.{k}.expand"), 2 * ck)?,
                fuse: Linear::new(&mut b, &format!("dec.{k}.fuse"), 2 * ck, ck, true)?,
                level: SwinLevel::new(&mut b, &format!("dec.{k}"), ck, cfg.heads << k, m, bpl, r)?,
            });
        }
        let out = cfg.scale * cfg.scale * cfg.in_channels;
        let head = Conv2d::new(&mut b, "head", 3, c, out, Init::Zeros)?;
        Ok(Self {
            cfg,
            params,
            embed,
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn num_params(&self) -> usize {
        self.embed.num_params()
            + self
                .encoder
                .iter()
                .map(|(l, m)| l.num_params() + m.num_params())
                .sum::<usize>()
            + self.bottleneck.num_params()
            + self
                .decoder
                .iter()
                .map(|d| d.expand.num_params() + d.fuse.num_params() + d.level.num_params())
                .sum::<usize>()
            + self.head.num_params()
    }

    pub fn num_msa(&self) -> usize {
        self.encoder.iter().map(|(l, _)| l.num_msa()).sum::<usize>()
            + self.bottleneck.num_msa()
            + self.decoder.iter().map(|d| d.level.num_msa()).sum::<usize>()
    }

    /// Forward pass that also reports the U-Net shapes.
    pub fn forward_traced(&self, lr: &Tensor<T>) -> Result<(Tensor<T>, GeneratorTrace)> {
        let (_, h, w, c) = dims4(lr)?;
        if c != self.cfg.in_channels {
            return Err(Error::shape("model input channels", lr.shape(), &[self.cfg.in_channels]));
        }
        self.cfg.check_input(h, w)?;
        let ps = &self.params;
        let mut trace = GeneratorTrace::default();
        let mut x = self.embed.forward(ps, lr)?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for (level, merge) in &self.encoder {
            let y = level.forward(ps, &x)?;
            trace.skips.push(y.shape().to_vec());
            x = merge.forward(ps, &y)?;
            skips.push(y);
        }
        x = self.bottleneck.forward(ps, &x)?;
        trace.bottleneck = x.shape().to_vec();
        trace.expanded = vec![Vec::new(); self.decoder.len()];
        for (k, dec) in self.decoder.iter().enumerate().rev() {
            let up = dec.expand.forward(ps, &x)?;
            trace.expanded[k] = up.shape().to_vec();
            let cat = Tensor::concat(&[&up, &skips[k]], 3)?;
            x = dec.level.forward(ps, &dec.fuse.forward(ps, &cat)?)?;
        }
        let s = self.cfg.scale;
        let residual = pixel_shuffle(&self.head.forward(ps, &x)?, s)?;
        let base = bicubic_resize(&lr.detach(), s * h, s * w)?;
        Ok((base.add(&residual)?, trace))
    }
}

impl<T: Scalar> SrModel<T> for Generator<T> {
    fn scale(&self) -> usize {
        self.cfg.scale
    }

    fn in_channels(&self) -> usize {
        self.cfg.in_channels
    }

    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn check_input(&self, h: usize, w: usize) -> Result<()> {
        self.cfg.check_input(h, w)
    }

    fn forward(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_traced(lr)?.0)
    }
}

/// Discriminator layout for a given high-resolution image size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscConfig {
    pub channels: usize,
    pub heads: usize,
    pub window: usize,
    pub blocks_per_level: usize,
    pub mlp_ratio: usize,
    pub in_channels: usize,
    pub hr_size: usize,
}

impl UgswinConfig {
    pub fn disc_config(&self, hr_size: usize) -> DiscConfig {
        DiscConfig {
            channels: self.disc_channels,
            heads: self.disc_heads,
            window: self.window,
            blocks_per_level: self.blocks_per_level,
            mlp_ratio: self.mlp_ratio,
            in_channels: self.in_channels,
            hr_size,
        }
    }
}

impl DiscConfig {
    /// Number of downsamplings: halve until the map fits in one window.
    pub fn levels(&self) -> Result<usize> {
        let mut size = self.hr_size;
        let mut n = 0;
        while size > self.window {
            if size % 2 != 0 {
                return Err(Error::invalid(format!(
                    "discriminator cannot halve an odd extent {size} (hr_size {})",
                    self.hr_size
                )));
            }
            size /= 2;
            n += 1;
        }
        Ok(n)
    }
}

pub struct Discriminator<T: Scalar> {
    pub cfg: DiscConfig,
    pub params: ParamStore<T>,
    pub embed: Conv2d,
    pub levels: Vec<(SwinLevel, PatchMerging)>,
    pub norm: LayerNorm,
    pub classifier: Linear,
}

impl<T: Scalar> Discriminator<T> {
    /// Weights come from the seed's discriminator stream.
    pub fn new(cfg: DiscConfig, seed: u64) -> Result<Self> {
        if cfg.hr_size == 0 || cfg.window == 0 || cfg.heads == 0 || cfg.channels % cfg.heads != 0 {
            return Err(Error::invalid("invalid discriminator configuration"));
        }
        let n = cfg.levels()?;
        let mut params = ParamStore::new();
        let mut rng = stream(seed, Stream::DiscInit);
        let mut b = ParamBuilder::new(&mut params, &mut rng);
        let embed = Conv2d::new(&mut b, "embed", 3, cfg.in_channels, cfg.channels, Init::DEFAULT_WEIGHT)?;
        let mut levels = Vec::with_capacity(n);
        for k in 0..n {
            let ck = cfg.channels << k;
            let level = SwinLevel::new(
                &mut b,
                &format!("level.{k}"),
                ck,
                cfg.heads << k,
                cfg.window,
                cfg.blocks_per_level,
                cfg.mlp_ratio,
            )?;
            levels.push((level, PatchMerging::new(&mut b, &format!("level.{k}.merge"), ck)?));
        }
        let top = cfg.channels << n;
        Ok(Self {
            norm: LayerNorm::new(&mut b, "norm", top)?,
            classifier: Linear::new(&mut b, "classifier", top, 1, true)?,
            cfg,
            params,
            embed,
            levels,
        })
    }

    pub fn num_params(&self) -> usize {
        self.embed.num_params()
            + self
                .levels
                .iter()
                .map(|(l, m)| l.num_params() + m.num_params())
                .sum::<usize>()
            + self.norm.num_params()
            + self.classifier.num_params()
    }

    /// One logit per image, shape `[B]`.
    pub fn forward(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, h, w, _) = dims4(img)?;
        if h != self.cfg.hr_size || w != self.cfg.hr_size {
            return Err(Error::invalid(format!(
                "discriminator expects {0}x{0} images, got {h}x{w}",
                self.cfg.hr_size
            )));
        }
        let ps = &self.params;
        let mut x = self.embed.forward(ps, img)?;
        for (level, merge) in &self.levels {
            x = merge.forward(ps, &level.forward(ps, &x)?)?;
        }
        let x = self.norm.forward(ps, &x)?;
        let (_, hh, ww, c) = dims4(&x)?;
        let pooled = x.reshape(&[b, hh * ww, c])?.mean_axis(1, false)?;
        self.classifier.forward(ps, &pooled)?.reshape(&[b])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanLossConfig {
    pub lambda_pixel: f64,
    pub lambda_adv: f64,
}

impl Default for GanLossConfig {
    fn default() -> Self {
        Self {
            lambda_pixel: 1.0,
            lambda_adv: 1e-3,
        }
    }
}

impl GanLossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_pixel) || !ok(self.lambda_adv) || (self.lambda_pixel == 0.0 && self.lambda_adv == 0.0) {
            return Err(Error::invalid(format!(
                "loss weights must be finite, non-negative and not both zero: {self:?}"
            )));
        }
        Ok(())
    }
}

pub struct GanLosses<T: Scalar> {
    pub loss_d: Tensor<T>,
    pub loss_g: Tensor<T>,
}

/// Real images labeled 1, generated images labeled 0.
pub fn discriminator_loss<T: Scalar>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<Tensor<T>> {
    bce_with_logits(d_real, 1.0).add(&bce_with_logits(d_fake, 0.0))
}

/// Pixel L1 plus the non-saturating adversarial term.
pub fn generator_loss<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    d_fake: &Tensor<T>,
    cfg: &GanLossConfig,
) -> Result<Tensor<T>> {
    let pixel = l1_loss(pred, target)?;
    let pixel = if cfg.lambda_pixel == 1.0 {
        pixel
    } else {
        pixel.mul_scalar(cfg.lambda_pixel)
    };
    if cfg.lambda_adv == 0.0 {
        return Ok(pixel);
    }
    pixel.add(&bce_with_logits(d_fake, 1.0).mul_scalar(cfg.lambda_adv))
}

pub fn gan_losses<T: Scalar>(
    d_real: &Tensor<T>,
    d_fake: &Tensor<T>,
    pred: &Tensor<T>,
    target: &Tensor<T>,
    cfg: &GanLossConfig,
) -> Result<GanLosses<T>> {
    if d_real.shape() != d_fake.shape() {
        return Err(Error::shape("gan logits", d_real.shape(), d_fake.shape()));
    }
    Ok(GanLosses {
        loss_d: discriminator_loss(d_real, d_fake)?,
        loss_g: generator_loss(pred, target, d_fake, cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> UgswinConfig {
        UgswinConfig {
            channels: 8,
            depth: 2,
            window: 4,
            scale: 2,
            heads: 2,
            blocks_per_level: 2,
            mlp_ratio: 2,
            in_channels: 3,
            disc_channels: 8,
            disc_heads: 2,
        }
    }

    #[test]
    fn counts_agree() {
        let g = Generator::<f32>::new(tiny(), 1).unwrap();
        assert_eq!(g.num_params(), g.params.numel());
        assert_eq!(g.num_msa(), 2 * (2 + 1 + 2));
        let d = Discriminator::<f32>::new(tiny().disc_config(32), 1).unwrap();
        assert_eq!(d.num_params(), d.params.numel());
        assert_eq!(d.levels.len(), 3);
    }

    #[test]
    fn loss_values_at_zero_logits() {
        let z = Tensor::<f64>::zeros(&[3]);
        let ln2 = 2f64.ln();
        assert!((discriminator_loss(&z, &z).unwrap().item() - 2.0 * ln2).abs() < 1e-12);
        let p = Tensor::<f64>::zeros(&[1, 2, 2, 3]);
        let t = Tensor::<f64>::ones(&[1, 2, 2, 3]);
        let cfg = GanLossConfig {
            lambda_pixel: 1.0,
            lambda_adv: 1.0,
        };
        let g = generator_loss(&p, &t, &z, &cfg).unwrap().item();
        assert!((g - 1.0 - ln2).abs() < 1e-12);
    }

    #[test]
    fn config_checks() {
        assert!(UgswinConfig::default().validate().is_ok());
        assert!(UgswinConfig::default().check_input(64, 64).is_ok());
        assert!(UgswinConfig::default().check_input(40, 64).is_err());
        assert!(GanLossConfig { lambda_pixel: 0.0, lambda_adv: 0.0 }.validate().is_err());
        assert!(GanLossConfig { lambda_pixel: -1.0, lambda_adv: 0.0 }.validate().is_err());
        let d = UgswinConfig::default().disc_config(256);
        assert_eq!(d.levels().unwrap(), 5);
        assert!(UgswinConfig::default().disc_config(36).levels().is_err());
    }
}
