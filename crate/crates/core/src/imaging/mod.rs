//! Raster primitives shared by every vision stage.
//!
//! Three raster types are used throughout the crate: [`Frame`] (interleaved
//! 8-bit RGB), [`GrayImage`] (8-bit luminance) and [`Mask`] (binary, every
//! value either 0 or 255). All of them are row-major with no padding.

mod color;
mod contour;
mod integral;
mod moments;
mod morphology;
pub mod pnm;

pub use color::{rgb_to_hsv, to_gray, Hsv};
pub use contour::{trace_boundary, Contour};
pub use integral::IntegralImage;
pub use moments::{moments, Moments};
pub use morphology::{close, dilate, erode};

use thiserror::Error;

/// Largest accepted width or height, in pixels.
pub const MAX_DIM: u32 = 8192;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImagingError {
    #[error("invalid dimensions {width}x{height} (each side must be in 1..={MAX_DIM})")]
    BadDimensions { width: u32, height: u32 },
    #[error("buffer holds {actual} bytes, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("mask value {value} at index {index} is not 0 or 255")]
    NotBinary { index: usize, value: u8 },
    #[error("rectangle must have non-zero width and height (got {w}x{h})")]
    EmptyRect { w: u32, h: u32 },
    #[error("rectangle {rect:?} does not fit inside a {width}x{height} image")]
    RectOutOfBounds { rect: Rect, width: u32, height: u32 },
    #[error("kernel size {0} must be odd and at least 1")]
    BadKernel(u32),
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
}

fn check_dims(width: u32, height: u32) -> Result<(), ImagingError> {
    if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(ImagingError::BadDimensions { width, height });
    }
    Ok(())
}

/// Axis-aligned rectangle with a guaranteed non-zero area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rect {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self, ImagingError> {
        if w == 0 || h == 0 {
            return Err(ImagingError::EmptyRect { w, h });
        }
        Ok(Rect { x, y, w, h })
    }

    pub fn x(&self) -> u32 {
        self.x
    }

    pub fn y(&self) -> u32 {
        self.y
    }

    pub fn w(&self) -> u32 {
        self.w
    }

    pub fn h(&self) -> u32 {
        self.h
    }

    /// Exclusive right edge.
    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Geometric center in pixel coordinates (pixel centers sit on integers).
    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + (self.w as f64 - 1.0) / 2.0,
            self.y as f64 + (self.h as f64 - 1.0) / 2.0,
        )
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.right() <= width && self.bottom() <= height
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    pub(crate) fn check_inside(&self, width: u32, height: u32) -> Result<(), ImagingError> {
        if self.fits_in(width, height) {
            Ok(())
        } else {
            Err(ImagingError::RectOutOfBounds { rect: *self, width, height })
        }
    }

    /// Rectangle of size `w`×`h` centered on `(cx, cy)`, shifted and
    /// shrunk as needed to lie inside a `width`×`height` image.
    pub fn centered_clamped(cx: f64, cy: f64, w: u32, h: u32, width: u32, height: u32) -> Rect {
        let w = w.clamp(1, width);
        let h = h.clamp(1, height);
        let x = (cx - (w as f64 - 1.0) / 2.0).round();
        let y = (cy - (h as f64 - 1.0) / 2.0).round();
        let x = x.clamp(0.0, (width - w) as f64) as u32;
        let y = y.clamp(0.0, (height - h) as f64) as u32;
        Rect { x, y, w, h }
    }

    /// Intersection with the image bounds; `None` when nothing overlaps.
    pub fn clip(x0: i64, y0: i64, x1: i64, y1: i64, width: u32, height: u32) -> Option<Rect> {
        let x0 = x0.max(0);
        let y0 = y0.max(0);
        let x1 = x1.min(width as i64);
        let y1 = y1.min(height as i64);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(Rect { x: x0 as u32, y: y0 as u32, w: (x1 - x0) as u32, h: (y1 - y0) as u32 })
    }

    /// Intersection over union of the two rectangles.
    pub fn iou(&self, other: &Rect) -> f64 {
        let iw = self.right().min(other.right()).saturating_sub(self.x.max(other.x));
        let ih = self.bottom().min(other.bottom()).saturating_sub(self.y.max(other.y));
        let inter = iw as u64 * ih as u64;
        inter as f64 / (self.area() + other.area() - inter) as f64
    }
}

/// Read access shared by single-channel rasters.
pub trait Raster {
    fn width(&self) -> u32;
    fn height(&self) -> u32;
    fn data(&self) -> &[u8];

    fn get(&self, x: u32, y: u32) -> u8 {
        self.data()[(y * self.width() + x) as usize]
    }
}

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImagingError> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(ImagingError::BufferLength { expected, actual: pixels.len() });
        }
        Ok(Frame { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, ImagingError> {
        check_dims(width, height)?;
        let pixels = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Ok(Frame { width, height, pixels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y * self.width + x) as usize * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y * self.width + x) as usize * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// 8-bit single-channel image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    values: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, values: Vec<u8>) -> Result<Self, ImagingError> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize;
        if values.len() != expected {
            return Err(ImagingError::BufferLength { expected, actual: values.len() });
        }
        Ok(GrayImage { width, height, values })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self, ImagingError> {
        check_dims(width, height)?;
        Ok(GrayImage { width, height, values: vec![value; width as usize * height as usize] })
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> u8,
    ) -> Result<Self, ImagingError> {
        check_dims(width, height)?;
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Ok(GrayImage { width, height, values })
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width;
        self.values[(y * w + x) as usize] = v;
    }

    /// Copy of the pixels under `r`.
    pub fn crop(&self, r: Rect) -> Result<GrayImage, ImagingError> {
        r.check_inside(self.width, self.height)?;
        GrayImage::from_fn(r.w, r.h, |x, y| self.get(r.x + x, r.y + y))
    }

    /// Box-filter resample to `w`×`h`; each output pixel is the rounded mean
    /// of the source pixels its footprint touches.
    pub fn resize(&self, w: u32, h: u32) -> Result<GrayImage, ImagingError> {
        let span = |d: u32, n: u32, src: u32| {
            let a = (d as u64 * src as u64 / n as u64) as u32;
            let b = ((d as u64 + 1) * src as u64).div_ceil(n as u64) as u32;
            (a, b.max(a + 1).min(src))
        };
        GrayImage::from_fn(w, h, |x, y| {
            let (x0, x1) = span(x, w, self.width);
            let (y0, y1) = span(y, h, self.height);
            let mut sum = 0u32;
            for yy in y0..y1 {
                for xx in x0..x1 {
                    sum += self.get(xx, yy) as u32;
                }
            }
            let n = (x1 - x0) * (y1 - y0);
            ((sum + n / 2) / n) as u8
        })
    }
}

impl Raster for GrayImage {
    fn width(&self) -> u32 {
        self.width
    }
    fn height(&self) -> u32 {
        self.height
    }
    fn data(&self) -> &[u8] {
        &self.values
    }
}

/// Binary mask: 255 marks foreground, 0 background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<u8>,
}

impl Mask {
    pub fn new(width: u32, height: u32, bits: Vec<u8>) -> Result<Self, ImagingError> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(ImagingError::BufferLength { expected, actual: bits.len() });
        }
        if let Some((index, &value)) = bits.iter().enumerate().find(|(_, &v)| v != 0 && v != 255) {
            return Err(ImagingError::NotBinary { index, value });
        }
        Ok(Mask { width, height, bits })
    }

    pub fn empty(width: u32, height: u32) -> Result<Self, ImagingError> {
        check_dims(width, height)?;
        Ok(Mask { width, height, bits: vec![0; width as usize * height as usize] })
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Result<Self, ImagingError> {
        check_dims(width, height)?;
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(if f(x, y) { 255 } else { 0 });
            }
        }
        Ok(Mask { width, height, bits })
    }

    pub(crate) fn from_bools(width: u32, height: u32, on: impl Iterator<Item = bool>) -> Mask {
        let bits: Vec<u8> = on.map(|b| if b { 255 } else { 0 }).collect();
        debug_assert_eq!(bits.len(), width as usize * height as usize);
        Mask { width, height, bits }
    }

    pub fn is_set(&self, x: u32, y: u32) -> bool {
        self.get(x, y) != 0
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        let w = self.width;
        self.bits[(y * w + x) as usize] = if on { 255 } else { 0 };
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    /// `true` when every foreground pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a == 0 || b != 0)
    }

    pub fn same_size(&self, other: &Mask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Intersection-over-union against another mask of the same size.
    /// Two empty masks score 1.
    pub fn iou(&self, other: &Mask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            let (a, b) = (a != 0, b != 0);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage { width: self.width, height: self.height, values: self.bits.clone() }
    }
}

impl Raster for Mask {
    fn width(&self) -> u32 {
        self.width
    }
    fn height(&self) -> u32 {
        self.height
    }
    fn data(&self) -> &[u8] {
        &self.bits
    }
}

/// Binarizes `map`: 255 where the value is at least `t`, 0 elsewhere.
pub fn threshold(map: &GrayImage, t: u8) -> Mask {
    Mask::from_bools(map.width, map.height, map.values.iter().map(|&v| v >= t))
}
