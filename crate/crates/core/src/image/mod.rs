//! Raster types, color conversion, file I/O and cut-and-paste compositing.
//!
//! All rasters are row-major. [`Image`] stores interleaved RGB floats in
//! `[0, 1]`; [`Mask`] and [`LabelMap`] store one byte per pixel.

mod color;
mod io;

pub use color::{lab_to_rgb, lab_to_rgb_pixel, rgb_to_lab, rgb_to_lab_pixel, LabImage};
pub use io::{load_image, load_label_map, load_mask, save_image, save_label_map, save_mask};

use crate::error::{Error, Result};

/// An RGB raster with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    /// Builds an image from interleaved RGB data, rejecting values outside `[0, 1]`.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "image data has {} values, expected {}",
                data.len(),
                height * width * 3
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidConfig(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Builds an image from arbitrary finite data, clamping into `[0, 1]`.
    /// Non-finite values become 0.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(y, x));
            }
        }
        Self::from_clamped(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        for (dst, v) in self.data[i..i + 3].iter_mut().zip(rgb) {
            *dst = v.clamp(0.0, 1.0);
        }
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }
}

/// Binary foreground indicator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    /// Builds a mask; any nonzero byte is treated as foreground.
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "mask data has {} values, expected {}",
                data.len(),
                height * width
            )));
        }
        let data = data.into_iter().map(|v| u8::from(v != 0)).collect();
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// One byte per pixel, each 0 or 1.
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| usize::from(v)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}

/// Per-pixel class indices in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_classes: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(height, width)?;
        if num_classes == 0 || num_classes > 256 {
            return Err(Error::InvalidConfig(format!("num_classes {num_classes} not in 1..=256")));
        }
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "label data has {} values, expected {}",
                data.len(),
                height * width
            )));
        }
        if let Some(&label) = data.iter().find(|&&l| usize::from(l) >= num_classes) {
            return Err(Error::LabelOutOfRange { label: label.into(), num_classes });
        }
        Ok(Self { height, width, num_classes, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> usize {
        self.data[y * self.width + x].into()
    }

    /// Mask of the pixels carrying `label`.
    pub fn mask_of(&self, label: usize) -> Mask {
        let data = self.data.iter().map(|&l| u8::from(usize::from(l) == label)).collect();
        Mask { height: self.height, width: self.width, data }
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidConfig(format!("raster must be non-empty, got {height}x{width}")));
    }
    Ok(())
}

pub(crate) fn ensure_same_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Cut-and-paste: foreground pixels where the mask is set, background elsewhere.
pub fn composite(foreground: &Image, background: &Image, mask: &Mask) -> Result<Image> {
    ensure_same_dims(background.dims(), foreground.dims())?;
    ensure_same_dims(background.dims(), mask.dims())?;
    let mut data = background.data.clone();
    for (i, &m) in mask.data.iter().enumerate() {
        if m != 0 {
            data[i * 3..i * 3 + 3].copy_from_slice(&foreground.data[i * 3..i * 3 + 3]);
        }
    }
    Ok(Image { height: background.height, width: background.width, data })
}
