//! Sectioned little-endian binary checkpoints.
//!
//! ```text
//! magic      8 bytes  "SRLTCKPT"
//! version    u32
//! meta       u32 length + UTF-8 (run configuration as JSON)
//! step       u64
//! rng        32-byte seed, u64 stream, u128 word position
//! params     u32 count, then tensor entries
//! optimizers u32 count, then per group:
//!            name, u64 t, f64 lr/beta1/beta2/eps,
//!            u32 count + first-moment entries, u32 count + second-moment entries
//!
//! tensor entry: u32 name length, name, u8 dtype (0 = f32, 1 = f64),
//!               u32 rank, u64 per dim, raw little-endian payload
//! ```

use std::fs;
use std::path::Path;

use super::adam::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::RngState;
use crate::tensor::{Precision, Scalar};

pub const MAGIC: &[u8; 8] = b"SRLTCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub precision: Precision,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

impl TensorRecord {
    pub fn from_values<T: Scalar>(name: impl Into<String>, shape: &[usize], values: &[T]) -> Self {
        let mut payload = Vec::with_capacity(values.len() * T::PRECISION.byte_width());
        for &v in values {
            v.write_le(&mut payload);
        }
        Self {
            name: name.into(),
            precision: T::PRECISION,
            shape: shape.to_vec(),
            payload,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn values<T: Scalar>(&self) -> Result<Vec<T>> {
        if self.precision != T::PRECISION {
            return Err(Error::CheckpointInvalid(format!(
                "`{}` is stored as {:?}, expected {:?}",
                self.name,
                self.precision,
                T::PRECISION
            )));
        }
        Ok(self
            .payload
            .chunks_exact(self.precision.byte_width())
            .map(T::read_le)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimRecord {
    pub name: String,
    pub t: u64,
    pub cfg: AdamConfig,
    pub m: Vec<TensorRecord>,
    pub v: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub step: u64,
    pub rng: RngState,
    pub params: Vec<TensorRecord>,
    pub optim: Vec<OptimRecord>,
}

/// Records of every parameter, names prefixed.
pub fn param_records<T: Scalar>(prefix: &str, ps: &ParamStore<T>) -> Vec<TensorRecord> {
    ps.iter()
        .map(|(_, name, t)| TensorRecord::from_values(format!("{prefix}{name}"), t.shape(), t.data()))
        .collect()
}

pub fn optim_record<T: Scalar>(group: &str, opt: &Adam<T>, ps: &ParamStore<T>) -> OptimRecord {
    let rec = |bufs: &[Vec<f64>]| {
        ps.iter()
            .zip(bufs)
            .map(|((_, name, t), b)| TensorRecord::from_values(name, t.shape(), b))
            .collect()
    };
    OptimRecord {
        name: group.to_string(),
        t: opt.t,
        cfg: opt.cfg,
        m: rec(&opt.m),
        v: rec(&opt.v),
    }
}

impl Checkpoint {
    pub fn param(&self, name: &str) -> Option<&TensorRecord> {
        self.params.iter().find(|r| r.name == name)
    }

    pub fn optim_group(&self, name: &str) -> Result<&OptimRecord> {
        self.optim
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| Error::CheckpointInvalid(format!("no optimizer group `{name}`")))
    }

    /// Overwrites every parameter of `ps` with the entry `prefix + name`.
    pub fn load_params<T: Scalar>(&self, prefix: &str, ps: &mut ParamStore<T>) -> Result<()> {
        let ids: Vec<_> = ps.iter().map(|(id, name, t)| (id, name.to_string(), t.shape().to_vec())).collect();
        for (id, name, shape) in ids {
            let full = format!("{prefix}{name}");
            let rec = self.param(&full).ok_or_else(|| Error::CheckpointMissing(full.clone()))?;
            if rec.shape != shape {
                return Err(Error::CheckpointInvalid(format!(
                    "`{full}` has shape {:?}, model expects {shape:?}",
                    rec.shape
                )));
            }
            ps.set(id, rec.values()?)?;
        }
        Ok(())
    }

    pub fn load_optim<T: Scalar>(&self, group: &str, ps: &ParamStore<T>) -> Result<Adam<T>> {
        let g = self.optim_group(group)?;
        let pick = |recs: &[TensorRecord]| -> Result<Vec<Vec<f64>>> {
            ps.iter()
                .map(|(_, name, t)| {
                    let r = recs
                        .iter()
                        .find(|r| r.name == name)
                        .ok_or_else(|| Error::CheckpointMissing(format!("{group} moments of {name}")))?;
                    if r.shape != t.shape() {
                        return Err(Error::CheckpointInvalid(format!("moment shape mismatch for `{name}`")));
                    }
                    r.values()
                })
                .collect()
        };
        Ok(Adam::from_parts(g.cfg, g.t, pick(&g.m)?, pick(&g.v)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.meta);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        put_records(&mut out, &self.params);
        out.extend_from_slice(&(self.optim.len() as u32).to_le_bytes());
        for g in &self.optim {
            put_str(&mut out, &g.name);
            out.extend_from_slice(&g.t.to_le_bytes());
            for v in [g.cfg.lr, g.cfg.beta1, g.cfg.beta2, g.cfg.eps] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            put_records(&mut out, &g.m);
            put_records(&mut out, &g.v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(Error::CheckpointMagic);
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        let meta = r.string("meta")?;
        let step = r.u64("step")?;
        let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().expect("32 bytes");
        let stream = r.u64("rng stream")?;
        let word_pos = u128::from_le_bytes(r.take(16, "rng position")?.try_into().expect("16 bytes"));
        let params = r.records("parameters")?;
        let groups = r.u32("optimizer count")?;
        let mut optim = Vec::new();
        for _ in 0..groups {
            let name = r.string("optimizer name")?;
            let t = r.u64("optimizer step")?;
            let cfg = AdamConfig {
                lr: r.f64("optimizer lr")?,
                beta1: r.f64("optimizer beta1")?,
                beta2: r.f64("optimizer beta2")?,
                eps: r.f64("optimizer eps")?,
            };
            let m = r.records("first moments")?;
            let v = r.records("second moments")?;
            optim.push(OptimRecord { name, t, cfg, m, v });
        }
        if r.pos != bytes.len() {
            return Err(Error::CheckpointInvalid(format!(
                "{} trailing bytes after the last section",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            meta,
            step,
            rng: RngState { seed, stream, word_pos },
            params,
            optim,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_records(out: &mut Vec<u8>, recs: &[TensorRecord]) {
    out.extend_from_slice(&(recs.len() as u32).to_le_bytes());
    for r in recs {
        put_str(out, &r.name);
        out.push(r.precision.tag());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&r.payload);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::CheckpointTruncated(what))?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::CheckpointTruncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &'static str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::CheckpointInvalid(format!("{what} is not UTF-8")))
    }

    fn records(&mut self, what: &'static str) -> Result<Vec<TensorRecord>> {
        let n = self.u32(what)?;
        let mut out = Vec::new();
        for _ in 0..n {
            let name = self.string(what)?;
            let tag = self.take(1, what)?[0];
            let precision =
                Precision::from_tag(tag).ok_or_else(|| Error::CheckpointInvalid(format!("unknown dtype tag {tag}")))?;
            let rank = self.u32(what)? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(self.u64(what)? as usize);
            }
            let len = shape
                .iter()
                .try_fold(precision.byte_width(), |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::CheckpointInvalid(format!("`{name}` is implausibly large")))?;
            let payload = self.take(len, what)?.to_vec();
            out.push(TensorRecord {
                name,
                precision,
                shape,
                payload,
            });
        }
        Ok(out)
    }
}
