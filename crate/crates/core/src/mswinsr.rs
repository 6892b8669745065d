//! MSwinSR: stages of multi-size window transformer blocks between a
//! shallow embedding conv and a pixel-shuffle head.

use serde::{Deserialize, Serialize};

use crate::attention::{MsaConfig, WindowAttention};
use crate::error::{Error, Result};
use crate::nn::{dims4, pixel_shuffle, Conv2d, LayerNorm, Linear};
use crate::params::{Init, ParamBuilder, ParamStore};
use crate::rng::{stream, Stream};
use crate::tensor::{Scalar, Tensor};

/// Common surface of the super-resolution networks.
pub trait SrModel<T: Scalar> {
    fn scale(&self) -> usize;
    fn in_channels(&self) -> usize;
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
    /// Errors if an `h×w` low-resolution input cannot be processed.
    fn check_input(&self, h: usize, w: usize) -> Result<()>;
    /// `[B,h,w,Cin] -> [B,s·h,s·w,Cin]`.
    fn forward(&self, lr: &Tensor<T>) -> Result<Tensor<T>>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MswinConfig {
    pub channels: usize,
    /// Blocks per stage.
    pub depth: Vec<usize>,
    pub window: usize,
    pub scale: usize,
    pub heads: usize,
    pub in_channels: usize,
}

impl Default for MswinConfig {
    fn default() -> Self {
        Self {
            channels: 60,
            depth: vec![2, 2, 2],
            window: 8,
            scale: 4,
            heads: 6,
            in_channels: 3,
        }
    }
}

impl MswinConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(2..=4).contains(&self.scale) {
            return bad(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        if self.depth.is_empty() || self.depth.contains(&0) {
            return bad(format!("every stage needs at least one block, got {:?}", self.depth));
        }
        if self.window < 2 || self.window % 2 != 0 {
            return bad(format!("window must be even and >= 2, got {}", self.window));
        }
        if self.in_channels == 0 {
            return bad("in_channels must be positive".into());
        }
        self.msa(false, false).validate()
    }

    pub fn msa(&self, shifted: bool, half: bool) -> MsaConfig {
        MsaConfig {
            channels: self.channels,
            heads: self.heads,
            window: self.window,
            shifted,
            half,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.depth.iter().sum()
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 {
            return Err(Error::invalid("empty input"));
        }
        for half in [false, true] {
            self.msa(false, half).check_extent(h, w)?;
        }
        Ok(())
    }
}

/// The four attention variants in block order.
pub const MSTB_VARIANTS: [(bool, bool); 4] = [(false, false), (true, false), (false, true), (true, true)];

#[derive(Debug, Clone)]
pub struct Mstb {
    pub msa: [WindowAttention; 4],
    pub post_norm: [LayerNorm; 4],
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub channels: usize,
}

/// Intermediate activations of one block.
pub struct MstbTrace<T: Scalar> {
    pub branches: Vec<Tensor<T>>,
    pub concat: Tensor<T>,
    pub output: Tensor<T>,
}

impl Mstb {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, cfg: &MswinConfig) -> Result<Self> {
        let c = cfg.channels;
        let mut msa = Vec::with_capacity(4);
        let mut post_norm = Vec::with_capacity(4);
        for (j, (shifted, half)) in MSTB_VARIANTS.iter().enumerate() {
            msa.push(WindowAttention::new(b, &format!("{name}.msa{j}"), cfg.msa(*shifted, *half))?);
            post_norm.push(LayerNorm::new(b, &format!("{name}.msa{j}_norm"), c)?);
        }
        Ok(Self {
            msa: msa.try_into().expect("four variants"),
            post_norm: post_norm.try_into().expect("four variants"),
            norm: LayerNorm::new(b, &format!("{name}.norm"), 4 * c)?,
            fc1: Linear::new(b, &format!("{name}.fc1"), 4 * c, 2 * c, true)?,
            fc2: Linear::new(b, &format!("{name}.fc2"), 2 * c, c, true)?,
            channels: c,
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.trace(ps, x)?.output)
    }

    pub fn trace<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<MstbTrace<T>> {
        let branches = self
            .msa
            .iter()
            .zip(&self.post_norm)
            .map(|(attn, ln)| ln.forward(ps, &attn.forward(ps, x)?)?.add(x))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor<T>> = branches.iter().collect();
        let concat = Tensor::concat(&refs, 3)?;
        let hidden = self.fc1.forward(ps, &self.norm.forward(ps, &concat)?)?.gelu();
        let output = self.fc2.forward(ps, &hidden)?.add(x)?;
        Ok(MstbTrace {
            branches,
            concat,
            output,
        })
    }

    pub fn num_params(&self) -> usize {
        self.msa.iter().map(|m| m.num_params()).sum::<usize>()
            + self.post_norm.iter().map(|n| n.num_params()).sum::<usize>()
            + self.norm.num_params()
            + self.fc1.num_params()
            + self.fc2.num_params()
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub blocks: Vec<Mstb>,
    pub conv: Conv2d,
}

impl Stage {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, cfg: &MswinConfig, blocks: usize) -> Result<Self> {
        let blocks = (0..blocks)
            .map(|j| Mstb::new(b, &format!("{name}.blocks.{j}"), cfg))
            .collect::<Result<Vec<_>>>()?;
        let c = cfg.channels;
        let conv = Conv2d::new(b, &format!("{name}.conv"), 3, c, c, Init::DEFAULT_WEIGHT)?;
        Ok(Self { blocks, conv })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = x.clone();
        for block in &self.blocks {
            y = block.forward(ps, &y)?;
        }
        self.conv.forward(ps, &y)?.add(x)
    }

    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(|b| b.num_params()).sum::<usize>() + self.conv.num_params()
    }
}

pub struct MswinSr<T: Scalar> {
    pub cfg: MswinConfig,
    pub params: ParamStore<T>,
    pub embed: Conv2d,
    pub stages: Vec<Stage>,
    pub head: Conv2d,
}

impl<T: Scalar> MswinSr<T> {
    /// Builds the network with weights drawn from the seed's init stream.
    pub fn new(cfg: MswinConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut rng = stream(seed, Stream::Init);
        let mut b = ParamBuilder::new(&mut params, &mut rng);
        let c = cfg.channels;
        let embed = Conv2d::new(&mut b, "embed", 3, cfg.in_channels, c, Init::DEFAULT_WEIGHT)?;
        let stages = cfg
            .depth
            .iter()
            .enumerate()
            .map(|(i, &l)| Stage::new(&mut b, &format!("stages.{i}"), &cfg, l))
            .collect::<Result<Vec<_>>>()?;
        let out = cfg.scale * cfg.scale * cfg.in_channels;
        let head = Conv2d::new(&mut b, "head", 3, c, out, Init::DEFAULT_WEIGHT)?;
        Ok(Self {
            cfg,
            params,
            embed,
            stages,
            head,
        })
    }

    pub fn num_msa(&self) -> usize {
        self.stages.iter().map(|s| s.blocks.len() * 4).sum()
    }

    pub fn num_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.blocks.len()).sum()
    }

    /// Structural parameter count; equals `params.numel()`.
    pub fn num_params(&self) -> usize {
        self.embed.num_params() + self.stages.iter().map(|s| s.num_params()).sum::<usize>() + self.head.num_params()
    }

    /// Deep features after the last stage, before the head.
    pub fn features(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, h, w, c) = dims4(lr)?;
        if c != self.cfg.in_channels {
            return Err(Error::shape("model input channels", lr.shape(), &[self.cfg.in_channels]));
        }
        self.cfg.check_input(h, w)?;
        let mut f = self.embed.forward(&self.params, lr)?;
        for stage in &self.stages {
            f = stage.forward(&self.params, &f)?;
        }
        Ok(f)
    }
}

impl<T: Scalar> SrModel<T> for MswinSr<T> {
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
        let f = self.features(lr)?;
        pixel_shuffle(&self.head.forward(&self.params, &f)?, self.cfg.scale)
    }
}
