//! Images, degradation into training pairs, datasets and quality metrics.

mod image;
mod metrics;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use image::{
    decode_image, decode_png, decode_ppm, encode_png, encode_ppm, quantize, read_image, write_image, Image,
};
pub use metrics::{mse, psnr, psnr_from_mse, ssim, SSIM_SIGMA, SSIM_WINDOW};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::tensor::{Scalar, Tensor};

/// Low/high resolution pair; `hr` is exactly `scale×` larger than `lr`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub lr: Image,
    pub hr: Image,
}

/// Center square crop, bicubic resize to `hr_size`, then bicubic
/// downscale by `scale`.
pub fn degrade_pair(img: &Image, hr_size: usize, scale: usize) -> Result<PairedSample> {
    if img.width < 2 || img.height < 2 {
        return Err(Error::invalid(format!(
            "image {}x{} is smaller than 2x2",
            img.width, img.height
        )));
    }
    if scale == 0 || hr_size == 0 || hr_size % scale != 0 {
        return Err(Error::invalid(format!(
            "hr_size {hr_size} is not a multiple of scale {scale}"
        )));
    }
    let hr = img.center_crop_square().resize(hr_size, hr_size)?;
    let lr_size = hr_size / scale;
    let lr = hr.resize(lr_size, lr_size)?;
    Ok(PairedSample { lr, hr })
}

/// `n` procedural images rendered at `hr_size` and degraded by `scale`.
pub fn synth_dataset(seed: u64, n: usize, hr_size: usize, scale: usize) -> Result<Vec<PairedSample>> {
    let mut rng = stream(seed, Stream::Synth);
    (0..n)
        .map(|_| degrade_pair(&synth::render(&mut rng, hr_size), hr_size, scale))
        .collect()
}

/// Where samples come from and how they are prepared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    /// Image directory; synthetic data is used when absent.
    pub dir: Option<PathBuf>,
    /// File listing image paths relative to `dir`, one per line.
    pub manifest: Option<PathBuf>,
    /// Number of procedural samples when no directory is given.
    pub synthetic: usize,
    pub hr_size: usize,
    /// Samples held out for validation.
    pub val_count: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            dir: None,
            manifest: None,
            synthetic: 16,
            hr_size: 256,
            val_count: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<PairedSample>,
}

impl Dataset {
    pub fn new(samples: Vec<PairedSample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn synthetic(seed: u64, n: usize, hr_size: usize, scale: usize) -> Result<Self> {
        Ok(Self::new(synth_dataset(seed, n, hr_size, scale)?))
    }

    /// Degrades every listed image.
    pub fn from_paths(paths: &[PathBuf], hr_size: usize, scale: usize) -> Result<Self> {
        let samples = paths
            .iter()
            .map(|p| degrade_pair(&read_image(p)?, hr_size, scale))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(samples))
    }

    /// Loads according to `spec`; `seed` drives synthetic generation and
    /// the train/validation split.
    pub fn load(spec: &DatasetSpec, scale: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        let all = match &spec.dir {
            Some(dir) => {
                let paths = match &spec.manifest {
                    Some(m) => read_manifest(&resolve(dir, m), dir)?,
                    None => list_images(dir)?,
                };
                Self::from_paths(&paths, spec.hr_size, scale)?
            }
            None => Self::synthetic(seed, spec.synthetic, spec.hr_size, scale)?,
        };
        all.split(seed, spec.val_count)
    }

    /// Seeded disjoint split into `(train, validation)`.
    pub fn split(self, seed: u64, val_count: usize) -> Result<(Dataset, Dataset)> {
        if val_count == 0 {
            return Ok((self, Dataset::default()));
        }
        if val_count >= self.len() {
            return Err(Error::invalid(format!(
                "validation size {val_count} leaves no training samples out of {}",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut stream(seed, Stream::Split));
        let (val_idx, train_idx) = order.split_at(val_count);
        let mut val_idx = val_idx.to_vec();
        let mut train_idx = train_idx.to_vec();
        val_idx.sort_unstable();
        train_idx.sort_unstable();
        let pick = |idx: &[usize]| Dataset::new(idx.iter().map(|&i| self.samples[i].clone()).collect());
        Ok((pick(&train_idx), pick(&val_idx)))
    }

    /// `(lr, hr)` batch tensors for the given sample indices.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        let lr: Vec<&Image> = indices.iter().map(|&i| &self.samples[i].lr).collect();
        let hr: Vec<&Image> = indices.iter().map(|&i| &self.samples[i].hr).collect();
        Ok((Image::stack(&lr)?, Image::stack(&hr)?))
    }
}

fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

/// Non-empty lines of a manifest, resolved against `base`. Lines starting
/// with `#` are ignored.
pub fn read_manifest(path: &Path, base: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_manifest(&text)
        .into_iter()
        .map(|rel| base.join(rel))
        .collect())
}

pub fn parse_manifest(text: &str) -> Vec<PathBuf> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(PathBuf::from)
        .collect()
}

/// `.ppm` and `.png` files of a directory in name order.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("ppm" | "png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip_with_comment() {
        let mut bytes = b"P6\n# made by hand\n2 1\n# another\n255\n".to_vec();
        bytes.extend([0, 128, 255, 1, 2, 3]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.to_u8(), vec![0, 128, 255, 1, 2, 3]);
        let again = encode_ppm(&img);
        assert_eq!(decode_ppm(&again).unwrap(), img);
    }

    #[test]
    fn ppm_errors() {
        assert!(decode_ppm(b"P3\n1 1\n255\n").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00\x01").is_err());
        assert!(decode_ppm(b"P6\n2").is_err());
        assert!(decode_image(b"GIF89a").is_err());
    }

    #[test]
    fn all_bytes_roundtrip() {
        let bytes: Vec<u8> = (0..=255).flat_map(|b| [b, 255 - b, b / 2]).collect();
        let img = Image::from_u8(256, 1, 3, &bytes).unwrap();
        assert_eq!(img.to_u8(), bytes);
    }

    #[test]
    fn png_roundtrip() {
        let img = Image::from_u8(3, 2, 3, &(0..18).map(|v| v * 13).collect::<Vec<u8>>()).unwrap();
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn manifest_lines() {
        let p = parse_manifest("a.ppm\n\n# skip\n  sub/b.png  \n");
        assert_eq!(p, vec![PathBuf::from("a.ppm"), PathBuf::from("sub/b.png")]);
    }

    #[test]
    fn crop_is_centered() {
        let data: Vec<f32> = (0..5 * 3).map(|v| v as f32).collect();
        let img = Image::new(5, 3, 1, data).unwrap();
        let c = img.center_crop_square();
        assert_eq!((c.width, c.height), (3, 3));
        assert_eq!(c.data, vec![1., 2., 3., 6., 7., 8., 11., 12., 13.]);
    }

    #[test]
    fn degrade_rejects_tiny_and_bad_scale() {
        assert!(degrade_pair(&Image::filled(1, 5, 3, 0.5), 8, 2).is_err());
        assert!(degrade_pair(&Image::filled(8, 8, 3, 0.5), 10, 4).is_err());
    }

    #[test]
    fn split_is_disjoint() {
        let ds = Dataset::synthetic(3, 6, 8, 2).unwrap();
        let all = ds.samples.clone();
        let (tr, va) = ds.split(9, 2).unwrap();
        assert_eq!((tr.len(), va.len()), (4, 2));
        for v in &va.samples {
            assert!(!tr.samples.contains(v));
            assert!(all.contains(v));
        }
    }
}
