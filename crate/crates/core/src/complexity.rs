//! Parameter and multiply-accumulate accounting.
//!
//! Multi-adds are scalar multiply-accumulates of matrix products and
//! convolutions for one forward pass of a single image. Softmax, layer
//! norm, bias additions, activations and resampling are not counted.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attention::MsaConfig;
use crate::error::{Error, Result};
use crate::mswinsr::{MswinConfig, MswinSr, SrModel};
use crate::params::ParamStore;
use crate::tensor::{mac_count, reset_mac_count, Scalar, Tensor};
use crate::ugswinsr::{Generator, UgswinConfig};

/// Closed-form cost models of a window attention layer, a SwinIR residual
/// block and a Swin stage (transformer blocks plus patch merging).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FormulaKind {
    #[serde(rename = "wmsa")]
    Wmsa,
    #[serde(rename = "rstb")]
    Rstb,
    #[serde(rename = "stage")]
    Stage,
}

impl FormulaKind {
    pub const ALL: [FormulaKind; 3] = [FormulaKind::Wmsa, FormulaKind::Rstb, FormulaKind::Stage];

    pub fn name(self) -> &'static str {
        match self {
            FormulaKind::Wmsa => "wmsa",
            FormulaKind::Rstb => "rstb",
            FormulaKind::Stage => "stage",
        }
    }
}

/// Exact integer value of a cost formula.
///
/// * `Wmsa`:  `4hwC² + 2M²hwC`
/// * `Rstb`:  `81hwC² + 12(M²+1)hwC`
/// * `Stage`: `37/8·hwC² + (3/4·M² + 13/16)·hwC`, evaluated over a common
///   denominator of 16 and rounded half-up.
pub fn eval_formula(kind: FormulaKind, h: u64, w: u64, c: u64, m: u64) -> Result<u128> {
    if h == 0 || w == 0 || c == 0 || m == 0 {
        return Err(Error::invalid("formula arguments must be positive"));
    }
    let (hw, c, m2) = (h as u128 * w as u128, c as u128, m as u128 * m as u128);
    Ok(match kind {
        FormulaKind::Wmsa => 4 * hw * c * c + 2 * m2 * hw * c,
        FormulaKind::Rstb => 81 * hw * c * c + 12 * (m2 + 1) * hw * c,
        FormulaKind::Stage => {
            let num = 74 * hw * c * c + (12 * m2 + 13) * hw * c;
            (num + 8) / 16
        }
    })
}

pub fn count_params<T: Scalar>(params: &ParamStore<T>) -> usize {
    params.numel()
}

/// Multiply-accumulates of one forward pass on a `1×h×w` input, measured by
/// running the model.
pub fn count_multiadds<T: Scalar, M: SrModel<T>>(model: &M, h: usize, w: usize) -> Result<u64> {
    model.check_input(h, w)?;
    let x = Tensor::<T>::zeros(&[1, h, w, model.in_channels()]);
    reset_mac_count();
    model.forward(&x)?;
    Ok(mac_count())
}

fn attention_params(c: usize, heads: usize, window: usize) -> usize {
    4 * (c * c + c) + (2 * window - 1).pow(2) * heads
}

fn conv_params(k: usize, cin: usize, cout: usize) -> usize {
    k * k * cin * cout + cout
}

/// Parameter count of an MSwinSR configuration, from its layer list.
pub fn mswinsr_params(cfg: &MswinConfig) -> usize {
    let c = cfg.channels;
    let attn = 2 * attention_params(c, cfg.heads, cfg.window) + 2 * attention_params(c, cfg.heads, cfg.window / 2);
    // four post-attention norms, the 4C norm, 4C->2C and 2C->C
    let block = attn + 4 * 2 * c + 2 * 4 * c + (8 * c * c + 2 * c) + (2 * c * c + c);
    let stages: usize = cfg.depth.iter().map(|&l| l * block + conv_params(3, c, c)).sum();
    conv_params(3, cfg.in_channels, c) + stages + conv_params(3, c, cfg.scale * cfg.scale * cfg.in_channels)
}

/// Multi-adds of MSwinSR on an `h×w` input.
pub fn mswinsr_multiadds(cfg: &MswinConfig, h: usize, w: usize) -> Result<u64> {
    cfg.check_input(h, w)?;
    let (hw, c) = ((h * w) as u64, cfg.channels as u64);
    let attn = |half: bool| {
        let m = cfg.msa(false, half).effective_window(h, w) as u64;
        4 * hw * c * c + 2 * m * m * hw * c
    };
    let block = 2 * attn(false) + 2 * attn(true) + hw * (8 * c * c + 2 * c * c);
    let conv = |cin: u64, cout: u64| 9 * cin * cout * hw;
    let cin = cfg.in_channels as u64;
    let s2 = (cfg.scale * cfg.scale) as u64;
    let stages: u64 = cfg.depth.iter().map(|&l| l as u64 * block + conv(c, c)).sum();
    Ok(conv(cin, c) + stages + conv(c, s2 * cin))
}

fn swin_block_params(c: usize, heads: usize, window: usize, ratio: usize) -> usize {
    2 * 2 * c + attention_params(c, heads, window) + (c * ratio * c + ratio * c) + (ratio * c * c + c)
}

/// Parameter count of the UGSwinSR generator.
pub fn ugswinsr_params(cfg: &UgswinConfig) -> usize {
    let (c, n, m, r) = (cfg.channels, cfg.blocks_per_level, cfg.window, cfg.mlp_ratio);
    let level = |k: usize| n * swin_block_params(c << k, cfg.heads << k, m, r);
    let merge = |ck: usize| 2 * 4 * ck + 4 * ck * 2 * ck;
    let mut total = conv_params(3, cfg.in_channels, c);
    for k in 0..cfg.depth {
        let ck = c << k;
        total += level(k) + merge(ck);
        // expand 2Ck -> 4Ck, fuse 2Ck -> Ck with bias
        total += 2 * ck * 4 * ck + (2 * ck * ck + ck) + level(k);
    }
    total + level(cfg.depth) + conv_params(3, c, cfg.scale * cfg.scale * cfg.in_channels)
}

/// Multi-adds of the UGSwinSR generator on an `h×w` input.
pub fn ugswinsr_multiadds(cfg: &UgswinConfig, h: usize, w: usize) -> Result<u64> {
    cfg.check_input(h, w)?;
    let n = cfg.blocks_per_level as u64;
    let r = cfg.mlp_ratio as u64;
    let level = |k: usize| {
        let (hk, wk) = (h >> k, w >> k);
        let m = MsaConfig {
            channels: cfg.channels,
            heads: cfg.heads,
            window: cfg.window,
            shifted: false,
            half: false,
        }
        .effective_window(hk, wk) as u64;
        let (hw, ck) = ((hk * wk) as u64, (cfg.channels << k) as u64);
        n * (4 * hw * ck * ck + 2 * m * m * hw * ck + 2 * r * hw * ck * ck)
    };
    let c = cfg.channels as u64;
    let cin = cfg.in_channels as u64;
    let hw0 = (h * w) as u64;
    let mut total = 9 * cin * c * hw0;
    for k in 0..cfg.depth {
        let hw = ((h >> k) * (w >> k)) as u64;
        let ck = (cfg.channels << k) as u64;
        // merge 4Ck -> 2Ck at quarter resolution, expand, fuse
        total += level(k) + 2 * hw * ck * ck;
        total += 2 * hw * ck * ck + 2 * hw * ck * ck + level(k);
    }
    let s2 = (cfg.scale * cfg.scale) as u64;
    Ok(total + level(cfg.depth) + 9 * c * s2 * cin * hw0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub model: String,
    pub input: [usize; 2],
    pub params_analytic: u64,
    pub params_empirical: u64,
    pub multiadds_analytic: u64,
    pub multiadds_empirical: u64,
    /// Cost formulas at the input size, embedding width and window.
    pub formula_values: BTreeMap<String, u128>,
}

impl ComplexityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn is_consistent(&self) -> bool {
        self.params_analytic == self.params_empirical && self.multiadds_analytic == self.multiadds_empirical
    }
}

fn formulas(h: usize, w: usize, c: usize, m: usize) -> Result<BTreeMap<String, u128>> {
    FormulaKind::ALL
        .iter()
        .map(|k| Ok((k.name().to_string(), eval_formula(*k, h as u64, w as u64, c as u64, m as u64)?)))
        .collect()
}

pub fn analyze_mswinsr(cfg: &MswinConfig, h: usize, w: usize) -> Result<ComplexityReport> {
    let model = MswinSr::<f32>::new(cfg.clone(), 0)?;
    Ok(ComplexityReport {
        model: "mswinsr".into(),
        input: [h, w],
        params_analytic: mswinsr_params(cfg) as u64,
        params_empirical: count_params(&model.params) as u64,
        multiadds_analytic: mswinsr_multiadds(cfg, h, w)?,
        multiadds_empirical: count_multiadds(&model, h, w)?,
        formula_values: formulas(h, w, cfg.channels, cfg.window)?,
    })
}

pub fn analyze_ugswinsr(cfg: &UgswinConfig, h: usize, w: usize) -> Result<ComplexityReport> {
    let model = Generator::<f32>::new(cfg.clone(), 0)?;
    Ok(ComplexityReport {
        model: "ugswinsr".into(),
        input: [h, w],
        params_analytic: ugswinsr_params(cfg) as u64,
        params_empirical: count_params(&model.params) as u64,
        multiadds_analytic: ugswinsr_multiadds(cfg, h, w)?,
        multiadds_empirical: count_multiadds(&model, h, w)?,
        formula_values: formulas(h, w, cfg.channels, cfg.window)?,
    })
}

fn human(v: u64) -> String {
    match v {
        v if v >= 1_000_000_000 => format!("{:.3}G", v as f64 / 1e9),
        v if v >= 1_000_000 => format!("{:.2}M", v as f64 / 1e6),
        v if v >= 1_000 => format!("{:.1}k", v as f64 / 1e3),
        v => v.to_string(),
    }
}

impl fmt::Display for ComplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model      {}  input {}x{}", self.model, self.input[1], self.input[0])?;
        writeln!(f, "{:<22}{:>16}{:>10}", "quantity", "value", "")?;
        let rows = [
            ("params (analytic)", self.params_analytic),
            ("params (empirical)", self.params_empirical),
            ("multi-adds (analytic)", self.multiadds_analytic),
            ("multi-adds (empirical)", self.multiadds_empirical),
        ];
        for (name, v) in rows {
            writeln!(f, "{name:<22}{v:>16}{:>10}", human(v))?;
        }
        for (name, v) in &self.formula_values {
            let v = *v as u64;
            writeln!(f, "{:<22}{v:>16}{:>10}", format!("formula {name}"), human(v))?;
        }
        Ok(())
    }
}
