//! Bilinear resampling with the half-pixel (pixel-center) convention.

use super::ImagePlane;
use crate::error::{Error, Result};

/// Resizes with bilinear interpolation. Output pixel centers map to
/// source coordinates via `sx = (x + 0.5) * w_in / w_out - 0.5` (and
/// likewise vertically); samples clamp to the image border. Resizing to
/// the input dimensions reproduces the input bit-for-bit.
pub fn resize_bilinear(img: &ImagePlane, out_w: usize, out_h: usize) -> Result<ImagePlane> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::ZeroOutputDimension);
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let c = img.channels;
    let sx_scale = img.width as f32 / out_w as f32;
    let sy_scale = img.height as f32 / out_h as f32;
    let mut data = vec![0.0f32; out_w * out_h * c];
    for oy in 0..out_h {
        let sy = ((oy as f32 + 0.5) * sy_scale - 0.5).clamp(0.0, (img.height - 1) as f32);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = sy - y0 as f32;
        for ox in 0..out_w {
            let sx = ((ox as f32 + 0.5) * sx_scale - 0.5).clamp(0.0, (img.width - 1) as f32);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let fx = sx - x0 as f32;
            for ch in 0..c {
                let p00 = img.data[(y0 * img.width + x0) * c + ch];
                let p10 = img.data[(y0 * img.width + x1) * c + ch];
                let p01 = img.data[(y1 * img.width + x0) * c + ch];
                let p11 = img.data[(y1 * img.width + x1) * c + ch];
                let top = p00 + (p10 - p00) * fx;
                let bot = p01 + (p11 - p01) * fx;
                data[(oy * out_w + ox) * c + ch] = top + (bot - top) * fy;
            }
        }
    }
    ImagePlane::new(out_w, out_h, c, img.role, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Role;
    use proptest::prelude::*;

    #[test]
    fn identity_resize_is_exact() {
        let data: Vec<f32> = (0..36).map(|v| v as f32 * 1.7 % 255.0).collect();
        let img = ImagePlane::new(4, 3, 3, Role::Rgb, data).unwrap();
        assert_eq!(resize_bilinear(&img, 4, 3).unwrap(), img);
    }

    #[test]
    fn two_to_three_interpolates_midpoint() {
        let img = ImagePlane::new(2, 1, 1, Role::Gray, vec![0.0, 255.0]).unwrap();
        let out = resize_bilinear(&img, 3, 1).unwrap();
        assert_eq!(out.data, vec![0.0, 127.5, 255.0]);
    }

    #[test]
    fn zero_dimension_rejected() {
        let img = ImagePlane::constant(2, 2, 1, Role::Gray, 0.0).unwrap();
        assert!(resize_bilinear(&img, 0, 2).is_err());
        assert!(resize_bilinear(&img, 2, 0).is_err());
    }

    proptest! {
        #[test]
        fn constant_images_stay_constant(
            v in 0.0f32..=255.0,
            w in 1usize..12, h in 1usize..12,
            ow in 1usize..20, oh in 1usize..20,
        ) {
            let img = ImagePlane::constant(w, h, 1, Role::Gray, v).unwrap();
            let out = resize_bilinear(&img, ow, oh).unwrap();
            for &p in &out.data {
                prop_assert!((p - v).abs() < 1e-4);
            }
        }

        #[test]
        fn output_within_input_extrema(
            data in proptest::collection::vec(0.0f32..=255.0, 12),
            ow in 1usize..9, oh in 1usize..9,
        ) {
            let img = ImagePlane::new(4, 3, 1, Role::Gray, data.clone()).unwrap();
            let lo = data.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let out = resize_bilinear(&img, ow, oh).unwrap();
            for &p in &out.data {
                prop_assert!(p >= lo - 1e-3 && p <= hi + 1e-3);
            }
        }
    }
}
