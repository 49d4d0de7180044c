//! Planar float images, PNG and raw-float I/O, and cropping.
//!
//! Samples are stored channel-major, row-major within a channel:
//! `data[c * width * height + y * width + x]`. Values outside `[0, 1]` are
//! legal and survive every operation except PNG export, which clamps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RAW_MAGIC: &[u8; 4] = b"DNB1";
const RAW_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

/// Axis-aligned pixel rectangle `(x0, y0, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 4]", from = "[usize; 4]")]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Rect { x0, y0, w, h }
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.w >= 1
            && self.h >= 1
            && self.x0.checked_add(self.w).is_some_and(|r| r <= width)
            && self.y0.checked_add(self.h).is_some_and(|b| b <= height)
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }
}

impl From<Rect> for [usize; 4] {
    fn from(r: Rect) -> Self {
        [r.x0, r.y0, r.w, r.h]
    }
}

impl From<[usize; 4]> for Rect {
    fn from(a: [usize; 4]) -> Self {
        Rect::new(a[0], a[1], a[2], a[3])
    }
}

/// Bit depth of a PNG sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PngDepth {
    #[serde(rename = "8")]
    Eight,
    #[serde(rename = "16")]
    Sixteen,
}

impl PngDepth {
    pub fn max_value(self) -> f64 {
        match self {
            PngDepth::Eight => 255.0,
            PngDepth::Sixteen => 65535.0,
        }
    }

    pub fn bits(self) -> u8 {
        match self {
            PngDepth::Eight => 8,
            PngDepth::Sixteen => 16,
        }
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        match bits {
            8 => Some(PngDepth::Eight),
            16 => Some(PngDepth::Sixteen),
            _ => None,
        }
    }
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels == 0 {
            return Err(Error::InvalidImage("zero channels".into()));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::InvalidImage("dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::InvalidImage(format!(
                "data length {} does not match {width}x{height}x{channels} = {expected}",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// All samples set to `value`.
    ///
    /// Panics if a dimension is zero.
    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        assert!(width > 0 && height > 0 && channels > 0, "empty image");
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Builds an image by evaluating `f(c, x, y)` for every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        assert!(width > 0 && height > 0 && channels > 0, "empty image");
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, x, y));
                }
            }
        }
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    pub(crate) fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                left: self.shape_string(),
                right: other.shape_string(),
            })
        }
    }

    /// Bitwise equality of all samples (NaN-aware, distinguishes -0.0).
    pub fn bit_eq(&self, other: &Image) -> bool {
        self.same_shape(other)
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Largest absolute per-sample difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .fold(0.0, f64::max)
    }

    pub fn crop(&self, rect: Rect) -> Result<Image> {
        if !rect.fits_within(self.width, self.height) {
            return Err(Error::OutOfBounds {
                what: format!("crop {rect:?}"),
                width: self.width,
                height: self.height,
            });
        }
        if rect.x0 == 0 && rect.y0 == 0 && rect.w == self.width && rect.h == self.height {
            return Ok(self.clone());
        }
        let mut data = Vec::with_capacity(rect.area() * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in rect.y0..rect.y0 + rect.h {
                let row = y * self.width;
                data.extend_from_slice(&plane[row + rect.x0..row + rect.x0 + rect.w]);
            }
        }
        Image::new(rect.w, rect.h, self.channels, data)
    }

    /// Overwrites the region at `(x0, y0)` with `src`.
    pub fn paste(&mut self, src: &Image, x0: usize, y0: usize) -> Result<()> {
        let rect = Rect::new(x0, y0, src.width, src.height);
        if src.channels != self.channels || !rect.fits_within(self.width, self.height) {
            return Err(Error::OutOfBounds {
                what: format!("paste {} at ({x0},{y0})", src.shape_string()),
                width: self.width,
                height: self.height,
            });
        }
        let w = self.width;
        for c in 0..self.channels {
            let dst = self.plane_mut(c);
            let s = src.plane(c);
            for y in 0..src.height {
                let d0 = (y0 + y) * w + x0;
                dst[d0..d0 + src.width].copy_from_slice(&s[y * src.width..(y + 1) * src.width]);
            }
        }
        Ok(())
    }

    /// Top-left anchored crop to the largest size divisible by `m` on both axes.
    pub fn crop_to_multiple(&self, m: usize) -> Result<Image> {
        if m == 0 {
            return Err(Error::InvalidParams("crop multiple must be >= 1".into()));
        }
        if self.width < m || self.height < m {
            return Err(Error::TooSmall {
                width: self.width,
                height: self.height,
                required: m,
            });
        }
        self.crop(Rect::new(
            0,
            0,
            self.width / m * m,
            self.height / m * m,
        ))
    }

    /// Rounds every sample to the nearest `depth` code and maps it back to
    /// `[0, 1]`, exactly as a PNG save/load round-trip would.
    pub fn quantized(&self, depth: PngDepth) -> Image {
        let max = depth.max_value();
        let data = self
            .data
            .iter()
            .map(|&v| (quantize(v, max) as f64 / max) as f32)
            .collect();
        Image {
            data,
            ..self.clone()
        }
    }

    pub fn clamped01(&self) -> Image {
        let data = self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Image {
            data,
            ..self.clone()
        }
    }
}

/// Clamp to `[0, 1]`, then round half up onto `0..=max`. NaN maps to 0.
#[inline]
pub fn quantize(v: f32, max: f64) -> u32 {
    let v = v as f64;
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * max + 0.5).floor() as u32
}

pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    load_png_with_depth(path).map(|(img, _)| img)
}

/// Loads an 8- or 16-bit gray/gray-alpha/RGB/RGBA PNG as a 3-channel image,
/// also reporting the source bit depth.
pub fn load_png_with_depth(path: impl AsRef<Path>) -> Result<(Image, PngDepth)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let decode_err = |e: png::DecodingError| match e {
        png::DecodingError::IoError(io) => Error::io(path, io),
        other => Error::PngDecode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let (color, bit_depth) = reader.output_color_type();
    let depth = match bit_depth {
        png::BitDepth::Eight => PngDepth::Eight,
        png::BitDepth::Sixteen => PngDepth::Sixteen,
        other => {
            return Err(Error::UnsupportedBitDepth {
                path: path.to_path_buf(),
                depth: other as u8,
            })
        }
    };
    let (src_channels, color_channels) = match color {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => {
            return Err(Error::UnsupportedColorType {
                path: path.to_path_buf(),
                color: format!("{color:?}"),
            })
        }
    };
    let size = reader.output_buffer_size().ok_or_else(|| Error::PngDecode {
        path: path.to_path_buf(),
        message: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(decode_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let n = w * h;
    let max = depth.max_value();
    let mut data = vec![0f32; n * 3];
    for y in 0..h {
        let line = &buf[y * info.line_size..(y + 1) * info.line_size];
        for x in 0..w {
            for c in 0..3 {
                let src_c = if color_channels == 1 { 0 } else { c };
                let idx = x * src_channels + src_c;
                let v = match depth {
                    PngDepth::Eight => line[idx] as f64,
                    PngDepth::Sixteen => u16::from_be_bytes([line[2 * idx], line[2 * idx + 1]]) as f64,
                };
                data[c * n + y * w + x] = (v / max) as f32;
            }
        }
    }
    Ok((Image::new(w, h, 3, data)?, depth))
}

/// Writes a 1- or 3-channel image as grayscale/RGB PNG, clamping and
/// rounding half up onto the integer range of `depth`.
pub fn save_png(img: &Image, path: impl AsRef<Path>, depth: PngDepth) -> Result<()> {
    let path = path.as_ref();
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => {
            return Err(Error::InvalidImage(format!(
                "PNG export needs 1 or 3 channels, got {c}"
            )))
        }
    };
    let (w, h, ch) = (img.width, img.height, img.channels);
    let n = w * h;
    let max = depth.max_value();
    let bytes_per_sample = (depth.bits() / 8) as usize;
    let mut buf = Vec::with_capacity(n * ch * bytes_per_sample);
    for i in 0..n {
        for c in 0..ch {
            let q = quantize(img.data[c * n + i], max);
            match depth {
                PngDepth::Eight => buf.push(q as u8),
                PngDepth::Sixteen => buf.extend_from_slice(&(q as u16).to_be_bytes()),
            }
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(color);
    encoder.set_depth(match depth {
        PngDepth::Eight => png::BitDepth::Eight,
        PngDepth::Sixteen => png::BitDepth::Sixteen,
    });
    let encode_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::PngEncode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(&buf).map_err(encode_err)?;
    writer.finish().map_err(encode_err)?;
    Ok(())
}

/// Encodes the `DNB1` raw format: magic, then width, height, channels as
/// little-endian u32, then the planar samples as little-endian f32.
pub fn encode_raw_f32(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + img.data.len() * 4);
    out.extend_from_slice(RAW_MAGIC);
    for dim in [img.width, img.height, img.channels] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_raw_f32(bytes: &[u8], path: &Path) -> Result<Image> {
    if bytes.len() < 4 || &bytes[..4] != RAW_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < RAW_HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: RAW_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (w, h, c) = (dim(0), dim(1), dim(2));
    let samples = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| Error::InvalidImage("raw header dimensions overflow".into()))?;
    let expected = RAW_HEADER_LEN + samples * 4;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
        });
    }
    let data = bytes[RAW_HEADER_LEN..expected]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Image::new(w, h, c, data)
}

pub fn save_raw_f32(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    f.write_all(&encode_raw_f32(img))
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_raw_f32(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_raw_f32(&bytes, path)
}

/// Loads `.dnb` files as raw floats and anything else as PNG.
pub fn load_any(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("dnb")) {
        load_raw_f32(path)
    } else {
        load_png(path)
    }
}
