//! Float rasters tagged with their colorspace.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err};
use crate::{Error, Result};

/// Colorspace (or channel view) of an [`Image`].
///
/// Value conventions: RGB is sRGB in `[0, 1]`; Lab has `L` in `[0, 100]` and
/// `a`, `b` in `[-128, 127]`; HSV has a circular hue in `[0, 1)` and `S`, `V`
/// in `[0, 1]`. `L` and `Ab` are the one- and two-channel views of Lab.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColorSpace {
    Rgb,
    Lab,
    Hsv,
    L,
    Ab,
}

impl ColorSpace {
    pub const fn channels(self) -> usize {
        match self {
            ColorSpace::Rgb | ColorSpace::Lab | ColorSpace::Hsv => 3,
            ColorSpace::L => 1,
            ColorSpace::Ab => 2,
        }
    }
}

/// Interleaved `H x W x C` raster. `C` is implied by the colorspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    space: ColorSpace,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, space: ColorSpace, data: Vec<f64>) -> Result<Self> {
        let expected = width * height * space.channels();
        if data.len() != expected {
            return Err(shape_err!(
                "{}x{} {:?} image needs {} values, got {}",
                width,
                height,
                space,
                expected,
                data.len()
            ));
        }
        Ok(Self { width, height, space, data })
    }

    pub fn filled(width: usize, height: usize, space: ColorSpace, pixel: &[f64]) -> Self {
        assert_eq!(pixel.len(), space.channels());
        let mut data = Vec::with_capacity(width * height * pixel.len());
        for _ in 0..width * height {
            data.extend_from_slice(pixel);
        }
        Self { width, height, space, data }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        space: ColorSpace,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let c = space.channels();
        let mut data = Vec::with_capacity(width * height * c);
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                data.extend_from_slice(&px[..c]);
            }
        }
        Self { width, height, space, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn channels(&self) -> usize {
        self.space.channels()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let c = self.channels();
        let i = (y * self.width + x) * c;
        &self.data[i..i + c]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let c = self.channels();
        let i = (y * self.width + x) * c;
        &mut self.data[i..i + c]
    }

    pub fn pixels(&self) -> core::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels())
    }

    /// Reinterprets the buffer under another colorspace with the same channel count.
    pub fn with_space(mut self, space: ColorSpace) -> Result<Self> {
        if space.channels() != self.channels() {
            return Err(invalid!("cannot retag {:?} as {:?}", self.space, space));
        }
        self.space = space;
        Ok(self)
    }

    pub fn expect_space(&self, space: ColorSpace) -> Result<()> {
        if self.space != space {
            return Err(Error::WrongSpace { expected: space, found: self.space });
        }
        Ok(())
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Copy of the rectangle `[x0, x0 + w) x [y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(shape_err!(
                "crop {}x{}+{}+{} outside {}x{}",
                w,
                h,
                x0,
                y0,
                self.width,
                self.height
            ));
        }
        let c = self.channels();
        let mut data = Vec::with_capacity(w * h * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(Image { width: w, height: h, space: self.space, data })
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Soft `H x W` selection with weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RegionMask {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(shape_err!("{}x{} mask needs {} values, got {}", width, height, width * height, data.len()));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid!("mask value {} outside [0, 1]", v));
        }
        Ok(Self { width, height, data })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![1.0; width * height] }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn matches(&self, img: &Image) -> bool {
        self.width == img.width() && self.height == img.height()
    }

    pub fn check_matches(&self, img: &Image) -> Result<()> {
        if !self.matches(img) {
            return Err(shape_err!(
                "mask is {}x{} but image is {}x{}",
                self.width,
                self.height,
                img.width(),
                img.height()
            ));
        }
        Ok(())
    }
}
