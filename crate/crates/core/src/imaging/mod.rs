//! Raster primitives shared by every other module: role-tagged float
//! images, binary masks, histograms and the classical operations on them
//! (color conversion, Otsu thresholding, connected components, bilinear
//! resampling).

mod color;
mod components;
mod otsu;
mod resample;

pub use color::{rgb_to_hsv, rgb_to_yuv};
pub use components::{label_components, largest_components};
pub use otsu::otsu_threshold;
pub use resample::resize_bilinear;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Semantic role of an [`ImagePlane`]. Color roles store values in
/// `[0,255]`; the thermal role stores degrees Celsius in `[0,60]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Rgb,
    Yuv,
    Hsv,
    Uv,
    Thermal,
    Gray,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Rgb => "rgb",
            Role::Yuv => "yuv",
            Role::Hsv => "hsv",
            Role::Uv => "uv",
            Role::Thermal => "thermal",
            Role::Gray => "gray",
        }
    }

    fn value_range(self) -> (f32, f32) {
        match self {
            Role::Thermal => (0.0, 60.0),
            _ => (0.0, 255.0),
        }
    }
}

/// Row-major float32 raster with 1 or 3 interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub role: Role,
    pub data: Vec<f32>,
}

impl ImagePlane {
    /// Builds an image and checks the type invariants (length, channel
    /// count, per-role value range).
    pub fn new(width: usize, height: usize, channels: usize, role: Role, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::DimensionMismatch(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        let img = Self { width, height, channels, role, data };
        img.check_range()?;
        Ok(img)
    }

    /// Constant-valued image.
    pub fn constant(width: usize, height: usize, channels: usize, role: Role, value: f32) -> Result<Self> {
        Self::new(width, height, channels, role, vec![value; width * height * channels])
    }

    fn check_range(&self) -> Result<()> {
        let (lo, hi) = self.role.value_range();
        for &v in &self.data {
            if !v.is_finite() || v < lo || v > hi {
                return Err(Error::DimensionMismatch(format!(
                    "value {v} outside [{lo},{hi}] for role {}",
                    self.role.as_str()
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Extracts one channel as a 1-channel image with the given role.
    pub fn channel(&self, c: usize, role: Role) -> Result<ImagePlane> {
        if c >= self.channels {
            return Err(Error::ChannelOutOfRange { index: c, channels: self.channels });
        }
        let mut data = Vec::with_capacity(self.width * self.height);
        for px in self.data.chunks_exact(self.channels) {
            data.push(px[c]);
        }
        ImagePlane::new(self.width, self.height, 1, role, data)
    }

    /// Mirrors columns; applying it twice returns the original image.
    pub fn flip_horizontal(&self) -> ImagePlane {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let sx = self.width - 1 - x;
                for c in 0..self.channels {
                    out.data[(y * self.width + x) * self.channels + c] =
                        self.data[(y * self.width + sx) * self.channels + c];
                }
            }
        }
        out
    }
}

/// Boolean raster annotating an image of the same dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new_false(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn new_true(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![true; width * height] }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask bits length {} != {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, bits })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Number of set pixels.
    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    /// Pixels in `self` but not in `other`.
    pub fn minus(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && !b)
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        if !self.same_dims(other) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect();
        Ok(BinaryMask { width: self.width, height: self.height, bits })
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_dims(other) && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Intersection-over-union against another mask of the same size.
    pub fn iou(&self, other: &BinaryMask) -> f64 {
        let mut inter = 0u64;
        let mut union = 0u64;
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += (a && b) as u64;
            union += (a || b) as u64;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn flip_horizontal(&self) -> BinaryMask {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.bits[y * self.width + x] = self.bits[y * self.width + (self.width - 1 - x)];
            }
        }
        out
    }
}

/// 256-bin integer histogram of one image channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram256 {
    pub counts: [u64; 256],
}

impl Histogram256 {
    pub fn from_counts(counts: [u64; 256]) -> Self {
        Self { counts }
    }

    /// Histograms one channel, rounding values to the nearest integer bin
    /// and clamping to `[0,255]`.
    pub fn from_channel(img: &ImagePlane, channel: usize) -> Result<Self> {
        if channel >= img.channels {
            return Err(Error::ChannelOutOfRange { index: channel, channels: img.channels });
        }
        let mut counts = [0u64; 256];
        for px in img.data.chunks_exact(img.channels) {
            let v = px[channel].round().clamp(0.0, 255.0) as usize;
            counts[v] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Bit set iff `lo <= pixel[channel] <= hi` (both ends inclusive).
pub fn threshold_band(img: &ImagePlane, channel: usize, lo: f32, hi: f32) -> Result<BinaryMask> {
    if lo > hi {
        return Err(Error::InvalidBand { lo, hi });
    }
    if channel >= img.channels {
        return Err(Error::ChannelOutOfRange { index: channel, channels: img.channels });
    }
    let bits = img
        .data
        .chunks_exact(img.channels)
        .map(|px| px[channel] >= lo && px[channel] <= hi)
        .collect();
    Ok(BinaryMask { width: img.width, height: img.height, bits })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_invariants_enforced() {
        assert!(ImagePlane::new(2, 2, 3, Role::Rgb, vec![0.0; 12]).is_ok());
        assert!(ImagePlane::new(2, 2, 3, Role::Rgb, vec![0.0; 11]).is_err());
        assert!(ImagePlane::new(2, 2, 2, Role::Rgb, vec![0.0; 8]).is_err());
        assert!(ImagePlane::new(1, 1, 1, Role::Rgb, vec![256.0]).is_err());
        assert!(ImagePlane::new(1, 1, 1, Role::Thermal, vec![61.0]).is_err());
        assert!(ImagePlane::new(1, 1, 1, Role::Thermal, vec![33.0]).is_ok());
    }

    #[test]
    fn band_boundaries_inclusive() {
        let img = ImagePlane::constant(4, 3, 1, Role::Gray, 10.0).unwrap();
        assert_eq!(threshold_band(&img, 0, 10.0, 10.0).unwrap().area(), 12);
        let img11 = ImagePlane::constant(4, 3, 1, Role::Gray, 11.0).unwrap();
        assert_eq!(threshold_band(&img11, 0, 10.0, 10.0).unwrap().area(), 0);
        assert_eq!(threshold_band(&img, 0, 0.0, 255.0).unwrap().area(), 12);
        assert!(threshold_band(&img, 0, 5.0, 1.0).is_err());
        assert!(threshold_band(&img, 1, 0.0, 1.0).is_err());
    }

    #[test]
    fn flip_is_involution() {
        let data: Vec<f32> = (0..24).map(|v| v as f32).collect();
        let img = ImagePlane::new(4, 2, 3, Role::Rgb, data).unwrap();
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);

        let row = ImagePlane::new(3, 1, 1, Role::Gray, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(row.flip_horizontal().data, vec![3.0, 2.0, 1.0]);

        let mut mask = BinaryMask::new_false(3, 2);
        mask.set(0, 0, true);
        mask.set(2, 1, true);
        let flipped = mask.flip_horizontal();
        assert!(flipped.get(2, 0) && flipped.get(0, 1));
        assert_eq!(flipped.flip_horizontal(), mask);
    }

    #[test]
    fn histogram_counts_pixels() {
        let img = ImagePlane::new(2, 2, 1, Role::Gray, vec![0.0, 255.0, 127.4, 127.6]).unwrap();
        let h = Histogram256::from_channel(&img, 0).unwrap();
        assert_eq!(h.total(), 4);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[255], 1);
        assert_eq!(h.counts[127], 1);
        assert_eq!(h.counts[128], 1);
    }
}
