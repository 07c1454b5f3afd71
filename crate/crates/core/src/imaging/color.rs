//! RGB→YUV and RGB→HSV conversion on 8-bit-scaled float images.

use super::{ImagePlane, Role};
use crate::error::{Error, Result};

/// Converts an RGB image to YUV with the studio-swing-free 8-bit
/// convention: `Y = 0.299R + 0.587G + 0.114B`, `U = 0.564(B-Y) + 128`,
/// `V = 0.713(R-Y) + 128`, everything clamped to `[0,255]`.
pub fn rgb_to_yuv(img: &ImagePlane) -> Result<ImagePlane> {
    if img.role != Role::Rgb {
        return Err(Error::RoleMismatch { expected: "rgb", got: img.role.as_str() });
    }
    let mut data = Vec::with_capacity(img.data.len());
    for px in img.data.chunks_exact(3) {
        let (r, g, b) = (px[0], px[1], px[2]);
        let y = 0.299 * r + 0.587 * g + 0.114 * b;
        let u = 0.564 * (b - y) + 128.0;
        let v = 0.713 * (r - y) + 128.0;
        data.push(y.clamp(0.0, 255.0));
        data.push(u.clamp(0.0, 255.0));
        data.push(v.clamp(0.0, 255.0));
    }
    ImagePlane::new(img.width, img.height, 3, Role::Yuv, data)
}

/// Converts an RGB image to HSV with hue on the half-degree scale
/// `[0,180)` (so the full circle fits an 8-bit channel), and saturation
/// and value on `[0,255]`. Gray pixels get hue 0 and saturation 0.
pub fn rgb_to_hsv(img: &ImagePlane) -> Result<ImagePlane> {
    if img.role != Role::Rgb {
        return Err(Error::RoleMismatch { expected: "rgb", got: img.role.as_str() });
    }
    let mut data = Vec::with_capacity(img.data.len());
    for px in img.data.chunks_exact(3) {
        let (r, g, b) = (px[0], px[1], px[2]);
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        let delta = max - min;
        let v = max;
        let s = if max > 0.0 { delta / max * 255.0 } else { 0.0 };
        let mut h = if delta <= 0.0 {
            0.0
        } else if max == r {
            60.0 * (g - b) / delta
        } else if max == g {
            60.0 * (b - r) / delta + 120.0
        } else {
            60.0 * (r - g) / delta + 240.0
        };
        if h < 0.0 {
            h += 360.0;
        }
        h /= 2.0;
        if h >= 180.0 {
            h -= 180.0;
        }
        data.push(h);
        data.push(s.clamp(0.0, 255.0));
        data.push(v);
    }
    ImagePlane::new(img.width, img.height, 3, Role::Hsv, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::threshold_band;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rgb1(r: f32, g: f32, b: f32) -> ImagePlane {
        ImagePlane::new(1, 1, 3, Role::Rgb, vec![r, g, b]).unwrap()
    }

    #[test]
    fn yuv_known_colors() {
        // Pure red: Y = 0.299*255 = 76.245, V = 0.713*(255-Y)+128 saturates.
        let yuv = rgb_to_yuv(&rgb1(255.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(yuv.data[0], 76.245, max_relative = 1e-6);
        assert_eq!(yuv.data[2], 255.0);

        // Pure blue pushes V below neutral: V = 0.713*(0-29.07)+128.
        let yuv = rgb_to_yuv(&rgb1(0.0, 0.0, 255.0)).unwrap();
        assert_relative_eq!(yuv.data[0], 29.07, max_relative = 1e-5);
        assert_relative_eq!(yuv.data[2], 128.0 - 0.713 * 29.07, max_relative = 1e-5);

        // Neutral gray sits exactly at the chroma midpoint.
        let yuv = rgb_to_yuv(&rgb1(128.0, 128.0, 128.0)).unwrap();
        assert_relative_eq!(yuv.data[0], 128.0, max_relative = 1e-6);
        assert_eq!(yuv.data[1], 128.0);
        assert_eq!(yuv.data[2], 128.0);
    }

    #[test]
    fn hsv_known_colors() {
        // Pure green: full-degree hue 120 -> 60 on the half-degree scale.
        let hsv = rgb_to_hsv(&rgb1(0.0, 255.0, 0.0)).unwrap();
        assert_relative_eq!(hsv.data[0], 60.0, max_relative = 1e-6);
        assert_eq!(hsv.data[1], 255.0);
        assert_eq!(hsv.data[2], 255.0);

        // Pure red wraps to hue 0; pure blue lands at 120.
        assert_eq!(rgb_to_hsv(&rgb1(255.0, 0.0, 0.0)).unwrap().data[0], 0.0);
        assert_relative_eq!(rgb_to_hsv(&rgb1(0.0, 0.0, 255.0)).unwrap().data[0], 120.0, max_relative = 1e-6);

        // Black: all-zero triple by convention.
        let hsv = rgb_to_hsv(&rgb1(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(&hsv.data[..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn hue_band_catches_green_not_skin() {
        let green = rgb_to_hsv(&rgb1(40.0, 200.0, 40.0)).unwrap();
        let skin = rgb_to_hsv(&rgb1(210.0, 150.0, 130.0)).unwrap();
        assert_eq!(threshold_band(&green, 0, 25.0, 97.0).unwrap().area(), 1);
        assert_eq!(threshold_band(&skin, 0, 25.0, 97.0).unwrap().area(), 0);
    }

    proptest! {
        #[test]
        fn yuv_components_in_range(r in 0.0f32..=255.0, g in 0.0f32..=255.0, b in 0.0f32..=255.0) {
            let yuv = rgb_to_yuv(&rgb1(r, g, b)).unwrap();
            for &v in &yuv.data {
                prop_assert!((0.0..=255.0).contains(&v));
            }
        }

        #[test]
        fn hsv_components_in_range(r in 0.0f32..=255.0, g in 0.0f32..=255.0, b in 0.0f32..=255.0) {
            let hsv = rgb_to_hsv(&rgb1(r, g, b)).unwrap();
            prop_assert!((0.0..180.0).contains(&hsv.data[0]));
            prop_assert!((0.0..=255.0).contains(&hsv.data[1]));
            prop_assert!((0.0..=255.0).contains(&hsv.data[2]));
        }

        #[test]
        fn gray_pixels_are_chroma_neutral(v in 0.0f32..=255.0) {
            let yuv = rgb_to_yuv(&rgb1(v, v, v)).unwrap();
            // The luma weights sum to 1 only up to f32 rounding, so the
            // chroma channels sit within one rounding step of neutral.
            prop_assert!((yuv.data[1] - 128.0).abs() < 1e-2);
            prop_assert!((yuv.data[2] - 128.0).abs() < 1e-2);
            let hsv = rgb_to_hsv(&rgb1(v, v, v)).unwrap();
            prop_assert_eq!(hsv.data[0], 0.0);
            prop_assert_eq!(hsv.data[1], 0.0);
            prop_assert_eq!(hsv.data[2], v);
        }
    }
}
