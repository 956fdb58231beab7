//! Image containers, training patches, display windowing and file I/O.
//!
//! `WIMG` layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "WIMG"
//! 4       2     format version (u16, currently 1)
//! 6       4     height (u32)
//! 10      4     width (u32)
//! 14      4     channels (u32)
//! 18      ...   height*width*channels binary64 values, channel-major,
//!               row-major within a channel
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const WIMG_MAGIC: &[u8; 4] = b"WIMG";
pub const WIMG_VERSION: u16 = 1;
const WIMG_HEADER_LEN: usize = 18;

/// Single-channel 2D scalar field, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Image {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} values for a {height}x{width} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("image contains non-finite values".into()));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Image {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.same_dims(other)?;
        Ok(Image {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Image) -> Result<Image> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Image) -> Result<Image> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Image {
        self.map(|v| v * s)
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Image) -> Result<()> {
        self.same_dims(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Circular shift: output(r, c) = input(r - dr, c - dc).
    pub fn circshift(&self, dr: isize, dc: isize) -> Image {
        let (h, w) = (self.height as isize, self.width as isize);
        Image::from_fn(self.height, self.width, |r, c| {
            let sr = (r as isize - dr).rem_euclid(h) as usize;
            let sc = (c as isize - dc).rem_euclid(w) as usize;
            self.get(sr, sc)
        })
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Image> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::Dimension(format!(
                "crop {height}x{width} at ({row},{col}) outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Image::from_fn(height, width, |r, c| {
            self.get(row + r, col + c)
        }))
    }
}

/// Multi-channel image, channel-major. Used for coefficient stacks and as
/// the in-memory form of a `WIMG` file.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl MultiImage {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        MultiImage {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{} values for {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(MultiImage {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_images(images: &[Image]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Dimension("no channels".into()))?;
        let (height, width) = first.dims();
        let mut data = Vec::with_capacity(height * width * images.len());
        for im in images {
            first.same_dims(im)?;
            data.extend_from_slice(im.data());
        }
        Ok(MultiImage {
            height,
            width,
            channels: images.len(),
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel_slice(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel(&self, c: usize) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.channel_slice(c).to_vec(),
        }
    }

    pub fn into_images(self) -> Vec<Image> {
        (0..self.channels).map(|c| self.channel(c)).collect()
    }

    /// Copies a `size`x`size` window of every channel into `out`
    /// (channel-major, row-major).
    pub fn copy_window(&self, row: usize, col: usize, size: usize, out: &mut [f64]) {
        debug_assert!(row + size <= self.height && col + size <= self.width);
        debug_assert_eq!(out.len(), self.channels * size * size);
        for c in 0..self.channels {
            let plane = self.channel_slice(c);
            for r in 0..size {
                let src = (row + r) * self.width + col;
                let dst = (c * size + r) * size;
                out[dst..dst + size].copy_from_slice(&plane[src..src + size]);
            }
        }
    }
}

impl From<Image> for MultiImage {
    fn from(im: Image) -> Self {
        MultiImage {
            height: im.height,
            width: im.width,
            channels: 1,
            data: im.data,
        }
    }
}

/// 8-bit grayscale raster for display export.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

/// Affine display map of `[lo, hi]` onto `[0, 255]`, clamped, rounded half
/// away from zero.
pub fn window_value(v: f64, lo: f64, hi: f64) -> u8 {
    let t = (v - lo) / (hi - lo) * 255.0;
    t.clamp(0.0, 255.0).round() as u8
}

pub fn window_hu(image: &Image, lo: f64, hi: f64) -> Result<GrayImage> {
    if !(lo < hi) {
        return Err(Error::Parameter(format!(
            "display window needs lo < hi, got ({lo}, {hi})"
        )));
    }
    Ok(GrayImage {
        height: image.height(),
        width: image.width(),
        data: image.data().iter().map(|&v| window_value(v, lo, hi)).collect(),
    })
}

/// A patch reference plus its materialized values.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub source_id: usize,
    pub row: usize,
    pub col: usize,
    /// channels x patch_size x patch_size
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub patch_size: usize,
    pub stride: usize,
    pub channels: usize,
    pub patches: Vec<Patch>,
}

/// Top-left corners of every full patch on the regular grid, row-major.
/// Partial border patches are dropped.
pub fn patch_positions(
    height: usize,
    width: usize,
    patch_size: usize,
    stride: usize,
) -> Result<Vec<(usize, usize)>> {
    if stride == 0 {
        return Err(Error::Parameter("patch stride must be at least 1".into()));
    }
    if patch_size == 0 || patch_size > height || patch_size > width {
        return Err(Error::Dimension(format!(
            "patch size {patch_size} does not fit a {height}x{width} image"
        )));
    }
    let rows = (height - patch_size) / stride + 1;
    let cols = (width - patch_size) / stride + 1;
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push((i * stride, j * stride));
        }
    }
    Ok(out)
}

pub fn extract_patches(stack: &MultiImage, patch_size: usize, stride: usize) -> Result<PatchSet> {
    let positions = patch_positions(stack.height(), stack.width(), patch_size, stride)?;
    let n = stack.channels() * patch_size * patch_size;
    let patches = positions
        .into_iter()
        .map(|(row, col)| {
            let mut data = vec![0.0; n];
            stack.copy_window(row, col, patch_size, &mut data);
            Patch {
                source_id: 0,
                row,
                col,
                data,
            }
        })
        .collect();
    Ok(PatchSet {
        patch_size,
        stride,
        channels: stack.channels(),
        patches,
    })
}

/// Inverse of [`extract_patches`] for a single source: overlapping
/// contributions are averaged, uncovered pixels are zero.
pub fn assemble_patches(set: &PatchSet, height: usize, width: usize) -> Result<MultiImage> {
    let ps = set.patch_size;
    let mut acc = MultiImage::zeros(height, width, set.channels);
    let mut hits = vec![0u32; height * width];
    for p in &set.patches {
        if p.row + ps > height || p.col + ps > width {
            return Err(Error::Dimension("patch outside target image".into()));
        }
        for c in 0..set.channels {
            for r in 0..ps {
                for k in 0..ps {
                    let idx = c * height * width + (p.row + r) * width + p.col + k;
                    acc.data[idx] += p.data[(c * ps + r) * ps + k];
                }
            }
        }
        for r in 0..ps {
            for k in 0..ps {
                hits[(p.row + r) * width + p.col + k] += 1;
            }
        }
    }
    let plane = height * width;
    for (i, v) in acc.data.iter_mut().enumerate() {
        let n = hits[i % plane];
        if n > 0 {
            *v /= n as f64;
        }
    }
    Ok(acc)
}

pub fn encode_wimg(image: &MultiImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(WIMG_HEADER_LEN + image.data.len() * 8);
    out.extend_from_slice(WIMG_MAGIC);
    out.extend_from_slice(&WIMG_VERSION.to_le_bytes());
    out.extend_from_slice(&(image.height as u32).to_le_bytes());
    out.extend_from_slice(&(image.width as u32).to_le_bytes());
    out.extend_from_slice(&(image.channels as u32).to_le_bytes());
    for v in &image.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

pub fn decode_wimg(bytes: &[u8]) -> Result<MultiImage> {
    if bytes.len() < 4 {
        return Err(Error::format(bytes.len() as u64, "truncated magic"));
    }
    if &bytes[..4] != WIMG_MAGIC {
        return Err(Error::format(0, "bad magic, expected WIMG"));
    }
    if bytes.len() < WIMG_HEADER_LEN {
        return Err(Error::format(bytes.len() as u64, "truncated header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != WIMG_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let height = read_u32(bytes, 6) as u64;
    let width = read_u32(bytes, 10) as u64;
    let channels = read_u32(bytes, 14) as u64;
    let payload = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels))
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::format(6, "dimension overflow"))?;
    let available = (bytes.len() - WIMG_HEADER_LEN) as u64;
    if available < payload {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: header declares {payload} bytes, {available} present"),
        ));
    }
    if available > payload {
        return Err(Error::format(
            WIMG_HEADER_LEN as u64 + payload,
            "trailing bytes after payload",
        ));
    }
    let mut data = Vec::with_capacity((payload / 8) as usize);
    for (i, chunk) in bytes[WIMG_HEADER_LEN..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(
                (WIMG_HEADER_LEN + 8 * i) as u64,
                "non-finite sample",
            ));
        }
        data.push(v);
    }
    MultiImage::from_vec(height as usize, width as usize, channels as usize, data)
}

pub fn save_wimg(path: impl AsRef<Path>, image: &MultiImage) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode_wimg(image))
        .map_err(|e| Error::io(path, e))
}

pub fn load_wimg(path: impl AsRef<Path>) -> Result<MultiImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wimg(&bytes)
}

pub fn save_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    save_wimg(path, &MultiImage::from(image.clone()))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let m = load_wimg(path)?;
    if m.channels() != 1 {
        return Err(Error::format(
            14,
            format!("expected 1 channel, found {}", m.channels()),
        ));
    }
    Ok(m.channel(0))
}
