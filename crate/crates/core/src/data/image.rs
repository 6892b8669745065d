use std::fs;
use std::io::{BufReader, Cursor};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::resize_buffer;
use crate::tensor::{Scalar, Tensor};

/// Row-major `height × width × channels` image with values nominally in
/// `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 || data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "image {width}x{height}x{channels} does not match {} values",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// `[1, H, W, C]` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::from_f64(v as f64)).collect();
        Tensor::from_vec(data, &[1, self.height, self.width, self.channels]).expect("valid image")
    }

    /// Batch item `index` of a `[B,H,W,C]` tensor, clamped to `[0, 1]`.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let &[b, h, w, c] = t.shape() else {
            return Err(Error::invalid(format!("expected [B,H,W,C], got {:?}", t.shape())));
        };
        if index >= b {
            return Err(Error::invalid(format!("batch index {index} out of range {b}")));
        }
        let n = h * w * c;
        let data = t.data()[index * n..(index + 1) * n]
            .iter()
            .map(|v| (v.as_f64() as f32).clamp(0.0, 1.0))
            .collect();
        Self::new(w, h, c, data)
    }

    /// Stacks equally sized images into `[B,H,W,C]`.
    pub fn stack<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
        let first = images.first().ok_or_else(|| Error::invalid("cannot stack zero images"))?;
        let shape = [first.height, first.width, first.channels];
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for img in images {
            if [img.height, img.width, img.channels] != shape {
                return Err(Error::shape(
                    "stack images",
                    &shape,
                    &[img.height, img.width, img.channels],
                ));
            }
            data.extend(img.data.iter().map(|&v| T::from_f64(v as f64)));
        }
        Tensor::from_vec(data, &[images.len(), shape[0], shape[1], shape[2]])
    }

    pub fn resize(&self, out_w: usize, out_h: usize) -> Result<Self> {
        if out_w == 0 || out_h == 0 {
            return Err(Error::invalid("resize target must be at least 1x1"));
        }
        let data = resize_buffer(&self.data, self.height, self.width, self.channels, out_h, out_w);
        Self::new(out_w, out_h, self.channels, data)
    }

    /// Largest centered square; odd leftovers drop the extra column/row on
    /// the right/bottom.
    pub fn center_crop_square(&self) -> Self {
        let side = self.width.min(self.height);
        let (x0, y0) = ((self.width - side) / 2, (self.height - side) / 2);
        let mut data = Vec::with_capacity(side * side * self.channels);
        for y in y0..y0 + side {
            let row = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[row..row + side * self.channels]);
        }
        Self {
            width: side,
            height: side,
            channels: self.channels,
            data,
        }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, channels, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// Three-channel copy (gray is replicated, alpha dropped).
    pub fn to_rgb(&self) -> Self {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.width * self.height * 3);
        for px in self.data.chunks(self.channels) {
            if self.channels >= 3 {
                data.extend_from_slice(&px[..3]);
            } else {
                data.extend([px[0]; 3]);
            }
        }
        Self {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM (`P6`). Header comments are skipped; `maxval` up to 65535.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::ImageFormat("truncated PPM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if token(&mut pos)? != "P6" {
        return Err(Error::ImageFormat("not a binary PPM (P6) file".into()));
    }
    let num = |pos: &mut usize, what: &str| -> Result<usize> {
        let t = token(pos)?;
        t.parse::<usize>()
            .map_err(|_| Error::ImageFormat(format!("bad PPM {what} `{t}`")))
    };
    let width = num(&mut pos, "width")?;
    let height = num(&mut pos, "height")?;
    let maxval = num(&mut pos, "maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::ImageFormat(format!(
            "unsupported PPM geometry {width}x{height} maxval {maxval}"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bpp = if maxval < 256 { 1 } else { 2 };
    let need = width * height * 3 * bpp;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::ImageFormat(format!("PPM raster truncated: need {need} bytes")))?;
    let scale = maxval as f32;
    let data = if bpp == 1 {
        raster.iter().map(|&b| b as f32 / scale).collect()
    } else {
        raster
            .chunks(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as f32 / scale)
            .collect()
    };
    Image::new(width, height, 3, data)
}

/// 8-bit binary PPM. Gray images are written as RGB.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let rgb = img.to_rgb();
    let mut out = format!("P6\n{} {}\n255\n", rgb.width, rgb.height).into_bytes();
    out.extend(rgb.to_u8());
    out
}

pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let fmt = |e: png::DecodingError| Error::ImageFormat(format!("PNG: {e}"));
    let mut decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(fmt)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::ImageFormat("PNG too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    let channels = info.color_type.samples();
    let (w, h) = (info.width as usize, info.height as usize);
    let img = Image::from_u8(w, h, channels, &buf[..w * h * channels])?;
    Ok(img.to_rgb())
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let rgb = img.to_rgb();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, rgb.width as u32, rgb.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let fmt = |e: png::EncodingError| Error::ImageFormat(format!("PNG: {e}"));
        let mut writer = enc.write_header().map_err(fmt)?;
        writer.write_image_data(&rgb.to_u8()).map_err(fmt)?;
    }
    Ok(out)
}

/// Decodes PPM or PNG by content; the result always has three channels.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(bytes)
    } else {
        Err(Error::ImageFormat("unrecognized image format (expected P6 PPM or PNG)".into()))
    }
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::ImageFormat(m) => Error::ImageFormat(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes PNG for a `.png` extension and PPM otherwise.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png { encode_png(img)? } else { encode_ppm(img) };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
