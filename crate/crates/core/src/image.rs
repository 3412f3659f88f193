//! Planar images and boolean pixel masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Channel-major (CHW) image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Input("image dimensions must be positive".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::Input(format!(
                "{channels}x{height}x{width} image needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value.clamp(0.0, 1.0); channels * height * width],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [c, h, w] => Self::new(c, h, w, t.data().to_vec()),
            _ => Err(Error::Input(format!("expected CHW tensor, got {:?}", t.shape()))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.channels, self.height, self.width], self.data.clone())
            .expect("image dimensions are positive")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Writes `value` clamped to `[0, 1]`.
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        self.data[(c * self.height + y) * self.width + x] = value.clamp(0.0, 1.0);
    }

    /// Color of the pixel with row-major index `p`.
    pub fn color(&self, p: usize) -> Vec<f64> {
        let n = self.pixels();
        (0..self.channels).map(|c| self.data[c * n + p]).collect()
    }

    pub fn set_color(&mut self, p: usize, color: &[f64]) {
        let n = self.pixels();
        for (c, v) in color.iter().enumerate().take(self.channels) {
            self.data[c * n + p] = v.clamp(0.0, 1.0);
        }
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Rounds every value to the nearest 8-bit level.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = quantize_level(*v);
        }
    }
}

pub fn quantize_level(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Boolean per-pixel mask with a cached popcount.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    count: usize,
}

impl PixelMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
            count: 0,
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
            count: height * width,
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Input(format!(
                "{height}x{width} mask needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        let count = bits.iter().filter(|&&b| b).count();
        Ok(Self {
            height,
            width,
            bits,
            count,
        })
    }

    pub fn from_indices(height: usize, width: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut m = Self::empty(height, width);
        for i in indices {
            m.set(i, true);
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, on: bool) {
        if self.bits[i] != on {
            self.bits[i] = on;
            if on {
                self.count += 1;
            } else {
                self.count -= 1;
            }
        }
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn same_dims(&self, other: &PixelMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    fn check_dims(&self, other: &PixelMask) -> Result<()> {
        if !self.same_dims(other) {
            return Err(Error::Input(format!(
                "mask dimensions differ: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &PixelMask) -> Result<usize> {
        self.check_dims(other)?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count())
    }

    pub fn union_count(&self, other: &PixelMask) -> Result<usize> {
        self.check_dims(other)?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| **a || **b).count())
    }

    pub fn hamming(&self, other: &PixelMask) -> Result<usize> {
        self.check_dims(other)?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count())
    }

    pub fn union_with(&mut self, other: &PixelMask) -> Result<()> {
        self.check_dims(other)?;
        for i in 0..self.bits.len() {
            if other.bits[i] {
                self.set(i, true);
            }
        }
        Ok(())
    }

    pub fn is_subset_of(&self, other: &PixelMask) -> bool {
        self.same_dims(other) && self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }

    pub fn complement(&self) -> PixelMask {
        PixelMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
            count: self.bits.len() - self.count,
        }
    }
}
