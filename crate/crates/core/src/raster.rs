//! Plain row-major image containers and PNG/PNM I/O.
//!
//! Pixel access is `(x, y)` = (column, row) throughout, except where a type
//! documents otherwise.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

/// TUM depth convention: raw 16-bit units per meter.
pub const DEFAULT_DEPTH_SCALE: f32 = 5000.0;

/// Metric depth image. A value of 0 marks an invalid measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
    depth_scale: f32,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>, depth_scale: f32) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} samples", width * height),
                got: format!("{} samples", data.len()),
            });
        }
        if let Some(bad) = data.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "depth values must be finite and non-negative, found {bad}"
            )));
        }
        if !(depth_scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "depth scale must be positive, got {depth_scale}"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
            depth_scale,
        })
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).max(0.0));
            }
        }
        Self {
            width,
            height,
            data,
            depth_scale: DEFAULT_DEPTH_SCALE,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth_scale(&self) -> f32 {
        self.depth_scale
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Depth at `(x, y)`, `None` when out of bounds or invalid.
    pub fn valid_at(&self, x: i64, y: i64) -> Option<f32> {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return None;
        }
        let d = self.get(x as usize, y as usize);
        (d > 0.0).then_some(d)
    }

    /// Re-encodes to raw 16-bit units using the image's depth scale.
    pub fn to_raw(&self) -> Vec<u16> {
        self.data
            .iter()
            .map(|d| (d * self.depth_scale).round().clamp(0.0, u16::MAX as f32) as u16)
            .collect()
    }
}

/// 8-bit RGB image, row-major interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} bytes", 3 * width * height),
                got: format!("{} bytes", data.len()),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        let data = color.iter().copied().cycle().take(3 * width * height).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Luma conversion (ITU-R BT.601 weights).
    pub fn to_gray(&self) -> GrayImage {
        let data = self
            .data
            .chunks_exact(3)
            .map(|c| 0.299 * c[0] as f32 + 0.587 * c[1] as f32 + 0.114 * c[2] as f32)
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer length checked at construction");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::image(path, e))
    }
}

/// Single-channel floating point intensity image (0..255 range).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} samples", width * height),
                got: format!("{} samples", data.len()),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample with coordinates clamped to the image.
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let maxx = (self.width - 1) as f32;
        let maxy = (self.height - 1) as f32;
        let x = x.clamp(0.0, maxx);
        let y = y.clamp(0.0, maxy);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = x - x0 as f32;
        let ay = y - y0 as f32;
        let top = self.get(x0, y0) * (1.0 - ax) + self.get(x1, y0) * ax;
        let bot = self.get(x0, y1) * (1.0 - ax) + self.get(x1, y1) * ax;
        top * (1.0 - ay) + bot * ay
    }

    /// 2x downsample with a 2x2 box filter.
    pub fn half(&self) -> GrayImage {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        GrayImage::from_fn(w, h, |x, y| {
            let x0 = (2 * x).min(self.width - 1);
            let y0 = (2 * y).min(self.height - 1);
            let x1 = (x0 + 1).min(self.width - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            0.25 * (self.get(x0, y0) + self.get(x1, y0) + self.get(x0, y1) + self.get(x1, y1))
        })
    }
}

/// Binary mask with the single convention 1 = dynamic (remove), 0 = static (keep).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y) as u8);
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = on as u8;
    }

    /// Mask bit at a possibly out-of-range location; out of range reads as dynamic.
    pub fn get_or_dynamic(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return true;
        }
        self.get(x as usize, y as usize)
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b != 0).count()
    }

    /// `true` when every set bit of `other` is also set here.
    pub fn contains(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims()
            && self
                .bits
                .iter()
                .zip(&other.bits)
                .all(|(a, b)| *a != 0 || *b == 0)
    }

    pub fn or_assign(&mut self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
        Ok(())
    }

    /// Intersection over union; two empty masks score 1.
    pub fn iou(&self, other: &BinaryMask) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.bits.iter().zip(&other.bits) {
            inter += (*a != 0 && *b != 0) as usize;
            union += (*a != 0 || *b != 0) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Writes an 8-bit grayscale PNG with 255 = dynamic, 0 = keep.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
            self.width as u32,
            self.height as u32,
            self.bits.iter().map(|b| if *b != 0 { 255 } else { 0 }).collect(),
        )
        .expect("mask buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::image(path, e))
    }

    /// Reads a PNG/PGM mask; any nonzero sample is dynamic.
    pub fn read(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma8();
        let (w, h) = img.dimensions();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            bits: img.into_raw().into_iter().map(|v| (v != 0) as u8).collect(),
        })
    }
}

/// Reads a 16-bit single-channel image (PNG or PGM) as raw samples.
pub fn read_raw_u16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma16();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw()))
}

pub fn write_raw_u16_png(path: &Path, width: usize, height: usize, raw: &[u16]) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, raw.to_vec()).ok_or_else(|| {
            Error::DimensionMismatch {
                expected: format!("{} samples", width * height),
                got: format!("{} samples", raw.len()),
            }
        })?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let m = BinaryMask::from_fn(7, 5, |x, y| (x + y) % 3 == 0);
        m.write_png(&path).unwrap();
        assert_eq!(BinaryMask::read(&path).unwrap(), m);
    }

    #[test]
    fn depth_rejects_negative_values() {
        assert!(DepthImage::new(1, 1, vec![-1.0], 5000.0).is_err());
        assert!(DepthImage::new(2, 1, vec![1.0], 5000.0).is_err());
    }

    #[test]
    fn raw_u16_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let raw: Vec<u16> = (0..12).map(|i| i * 5000).collect();
        write_raw_u16_png(&path, 4, 3, &raw).unwrap();
        assert_eq!(read_raw_u16(&path).unwrap(), (4, 3, raw));
    }

    #[test]
    fn bilinear_sample_interpolates() {
        let g = GrayImage::from_fn(2, 2, |x, y| (x + 2 * y) as f32);
        assert!((g.sample(0.5, 0.5) - 1.5).abs() < 1e-6);
    }
}
