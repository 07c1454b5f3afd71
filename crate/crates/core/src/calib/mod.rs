//! Thermal-camera calibration and thermal→RGB registration: planar
//! homography estimation (normalized DLT), a two-term radial distortion
//! model, Zhang-style intrinsics with Levenberg–Marquardt refinement,
//! chessboard corner detection on synthetic renders, and perspective
//! warping between the camera coordinate systems.

mod corners;
mod distortion;
mod homography;
mod zhang;

pub use corners::{detect_chessboard_corners, register_thermal_to_rgb, RegistrationResult};
pub use distortion::{distort_image, distort_point, undistort_image, undistort_point};
pub use homography::{estimate_homography, warp_perspective};
pub(crate) use homography::sample_bilinear;
pub use zhang::{estimate_intrinsics, CalibrationResult};

use crate::error::{Error, Result};
use crate::imaging::ImagePlane;
use serde::{Deserialize, Serialize};

/// Pinhole intrinsics plus two radial distortion terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
}

impl CameraModel {
    /// Checks the model invariants against the image it describes.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidGeometry(format!("focal lengths must be positive: {self:?}")));
        }
        if !(0.0..=width as f64).contains(&self.cx) || !(0.0..=height as f64).contains(&self.cy) {
            return Err(Error::InvalidGeometry(format!(
                "principal point ({}, {}) outside {width}x{height}",
                self.cx, self.cy
            )));
        }
        if self.k1.abs() >= 2.0 || self.k2.abs() >= 2.0 {
            return Err(Error::InvalidGeometry(format!("|k1|,|k2| must be < 2: {self:?}")));
        }
        Ok(())
    }
}

/// 3×3 projective transform, row-major, normalized so `h[8] = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography3 {
    pub h: [f64; 9],
}

impl Homography3 {
    pub fn identity() -> Self {
        Self { h: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0] }
    }

    /// Normalizes and validates an arbitrary 3×3 matrix.
    pub fn from_array(m: [f64; 9]) -> Result<Self> {
        if m[8].abs() < 1e-12 || m.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularHomography);
        }
        let mut h = m;
        for v in h.iter_mut() {
            *v /= m[8];
        }
        let out = Self { h };
        if out.det().abs() <= 1e-12 {
            return Err(Error::SingularHomography);
        }
        Ok(out)
    }

    pub fn det(&self) -> f64 {
        let h = &self.h;
        h[0] * (h[4] * h[8] - h[5] * h[7]) - h[1] * (h[3] * h[8] - h[5] * h[6])
            + h[2] * (h[3] * h[7] - h[4] * h[6])
    }

    /// Maps a point through the homography.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let h = &self.h;
        let w = h[6] * x + h[7] * y + h[8];
        ((h[0] * x + h[1] * y + h[2]) / w, (h[3] * x + h[4] * y + h[5]) / w)
    }

    pub fn inverse(&self) -> Result<Homography3> {
        let h = &self.h;
        let det = self.det();
        if det.abs() <= 1e-12 {
            return Err(Error::SingularHomography);
        }
        let adj = [
            h[4] * h[8] - h[5] * h[7],
            h[2] * h[7] - h[1] * h[8],
            h[1] * h[5] - h[2] * h[4],
            h[5] * h[6] - h[3] * h[8],
            h[0] * h[8] - h[2] * h[6],
            h[2] * h[3] - h[0] * h[5],
            h[3] * h[7] - h[4] * h[6],
            h[1] * h[6] - h[0] * h[7],
            h[0] * h[4] - h[1] * h[3],
        ];
        Homography3::from_array(adj.map(|v| v / det))
    }

    /// Composition `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Homography3) -> Result<Homography3> {
        let a = &self.h;
        let b = &other.h;
        let mut m = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                m[r * 3 + c] =
                    a[r * 3] * b[c] + a[r * 3 + 1] * b[3 + c] + a[r * 3 + 2] * b[6 + c];
            }
        }
        Homography3::from_array(m)
    }
}

/// Ordered subpixel positions of a board's internal corners, row-major
/// from the top-left corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerGrid {
    pub rows: usize,
    pub cols: usize,
    pub points: Vec<(f64, f64)>,
}

impl CornerGrid {
    pub fn new(rows: usize, cols: usize, points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "corner grid {}x{} needs {} points, got {}",
                rows,
                cols,
                rows * cols,
                points.len()
            )));
        }
        Ok(Self { rows, cols, points })
    }
}

/// Physical chessboard: square counts and square edge length. Internal
/// corners number `(squares_y - 1) × (squares_x - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardSpec {
    pub squares_x: usize,
    pub squares_y: usize,
    pub square_mm: f64,
}

impl Default for BoardSpec {
    fn default() -> Self {
        // 12×6 squares → an 11×5 internal-corner lattice.
        Self { squares_x: 12, squares_y: 6, square_mm: 24.0 }
    }
}

impl BoardSpec {
    pub fn corner_rows(&self) -> usize {
        self.squares_y - 1
    }

    pub fn corner_cols(&self) -> usize {
        self.squares_x - 1
    }

    /// Board-plane corner coordinates in millimeters, row-major, matching
    /// the ordering contract of [`CornerGrid`].
    pub fn model_points_mm(&self) -> Vec<(f64, f64)> {
        let mut pts = Vec::with_capacity(self.corner_rows() * self.corner_cols());
        for r in 1..self.squares_y {
            for c in 1..self.squares_x {
                pts.push((c as f64 * self.square_mm, r as f64 * self.square_mm));
            }
        }
        pts
    }
}

/// Warps a raw (distorted) thermal image into RGB coordinates with a
/// single resampling pass: each output pixel is pulled back through the
/// inverse homography and then pushed through the forward distortion to
/// find its source in the raw frame.
pub fn warp_thermal_to_rgb(
    img: &ImagePlane,
    cam: &CameraModel,
    h_thermal_to_rgb: &Homography3,
    out_w: usize,
    out_h: usize,
) -> Result<ImagePlane> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::ZeroOutputDimension);
    }
    let inv = h_thermal_to_rgb.inverse()?;
    let c = img.channels;
    let mut data = vec![0.0f32; out_w * out_h * c];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let (ux, uy) = inv.apply(ox as f64, oy as f64);
            let (sx, sy) = distort_point(cam, ux, uy);
            for ch in 0..c {
                if let Some(v) = homography::sample_bilinear(img, sx, sy, ch) {
                    data[(oy * out_w + ox) * c + ch] = v;
                }
            }
        }
    }
    ImagePlane::new(out_w, out_h, c, img.role, data)
}
