//! Normalized-DLT homography estimation and perspective warping.

use super::Homography3;
use crate::error::{Error, Result};
use crate::imaging::ImagePlane;
use nalgebra::{DMatrix, SymmetricEigen};

/// Hartley normalization: translate the centroid to the origin and scale
/// so the mean distance from it is √2. Returns the similarity transform
/// as a row-major 3×3.
fn normalizing_transform(pts: &[(f64, f64)]) -> Result<[f64; 9]> {
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x, sy + y));
    let (mx, my) = (mx / n, my / n);
    let mean_dist = pts.iter().map(|&(x, y)| ((x - mx).powi(2) + (y - my).powi(2)).sqrt()).sum::<f64>() / n;
    if mean_dist < 1e-12 {
        return Err(Error::DegenerateConfiguration("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok([s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0])
}

fn apply3(t: &[f64; 9], x: f64, y: f64) -> (f64, f64) {
    let w = t[6] * x + t[7] * y + t[8];
    ((t[0] * x + t[1] * y + t[2]) / w, (t[3] * x + t[4] * y + t[5]) / w)
}

fn mat_mul(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut m = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            m[r * 3 + c] = a[r * 3] * b[c] + a[r * 3 + 1] * b[3 + c] + a[r * 3 + 2] * b[6 + c];
        }
    }
    m
}

fn invert_similarity(t: &[f64; 9]) -> [f64; 9] {
    // [s 0 tx; 0 s ty; 0 0 1]⁻¹ = [1/s 0 -tx/s; 0 1/s -ty/s; 0 0 1]
    let s = t[0];
    [1.0 / s, 0.0, -t[2] / s, 0.0, 1.0 / s, -t[5] / s, 0.0, 0.0, 1.0]
}

/// Estimates the homography mapping `src[i]` to `dst[i]` with the
/// normalized DLT: Hartley-normalize both sets, stack the 2n×9 design
/// matrix, take the eigenvector of AᵀA with the smallest eigenvalue, and
/// denormalize. Exact correspondences reproject below 1e-9 px; with more
/// than 4 points the solution is the algebraic least-squares fit.
pub fn estimate_homography(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Result<Homography3> {
    if src.len() != dst.len() {
        return Err(Error::LengthMismatch(src.len(), dst.len()));
    }
    if src.len() < 4 {
        return Err(Error::DegenerateConfiguration(format!(
            "homography needs >= 4 correspondences, got {}",
            src.len()
        )));
    }
    let t_src = normalizing_transform(src)?;
    let t_dst = normalizing_transform(dst)?;

    let n = src.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 9);
    for i in 0..n {
        let (x, y) = apply3(&t_src, src[i].0, src[i].1);
        let (u, v) = apply3(&t_dst, dst[i].0, dst[i].1);
        a.row_mut(2 * i).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(2 * i + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let h_norm = smallest_eigenvector(&a)?;

    let h = mat_mul(&invert_similarity(&t_dst), &mat_mul(&h_norm, &t_src));
    Homography3::from_array(h)
}

/// Solves `A h = 0` through the symmetric eigendecomposition of `AᵀA`,
/// rejecting rank-deficient systems (two near-zero eigenvalues).
fn smallest_eigenvector(a: &DMatrix<f64>) -> Result<[f64; 9]> {
    let ata = a.transpose() * a;
    let eig = SymmetricEigen::new(ata);
    let mut idx: Vec<usize> = (0..9).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let max_ev = eig.eigenvalues[idx[8]].max(1.0);
    if eig.eigenvalues[idx[1]] < 1e-12 * max_ev {
        return Err(Error::DegenerateConfiguration(
            "correspondences do not determine a unique homography".into(),
        ));
    }
    let v = eig.eigenvectors.column(idx[0]);
    let mut h = [0.0; 9];
    for i in 0..9 {
        h[i] = v[i];
    }
    Ok(h)
}

/// Bilinear sample at a fractional position; `None` outside the valid
/// pixel-center rectangle `[0, w-1] × [0, h-1]`.
pub(crate) fn sample_bilinear(img: &ImagePlane, x: f64, y: f64, ch: usize) -> Option<f32> {
    if !(0.0..=(img.width - 1) as f64).contains(&x) || !(0.0..=(img.height - 1) as f64).contains(&y) {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = (x - x0 as f64) as f32;
    let fy = (y - y0 as f64) as f32;
    let c = img.channels;
    let p00 = img.data[(y0 * img.width + x0) * c + ch];
    let p10 = img.data[(y0 * img.width + x1) * c + ch];
    let p01 = img.data[(y1 * img.width + x0) * c + ch];
    let p11 = img.data[(y1 * img.width + x1) * c + ch];
    let top = p00 + (p10 - p00) * fx;
    let bot = p01 + (p11 - p01) * fx;
    Some(top + (bot - top) * fy)
}

/// Warps `img` by `h` into an `out_w × out_h` canvas via inverse mapping
/// with bilinear sampling; destinations with no source fill with 0.
pub fn warp_perspective(img: &ImagePlane, h: &Homography3, out_w: usize, out_h: usize) -> Result<ImagePlane> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::ZeroOutputDimension);
    }
    let inv = h.inverse()?;
    let c = img.channels;
    let mut data = vec![0.0f32; out_w * out_h * c];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let (sx, sy) = inv.apply(ox as f64, oy as f64);
            for ch in 0..c {
                if let Some(v) = sample_bilinear(img, sx, sy, ch) {
                    data[(oy * out_w + ox) * c + ch] = v;
                }
            }
        }
    }
    ImagePlane::new(out_w, out_h, c, img.role, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Role;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const UNIT_SQUARE: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];

    #[test]
    fn identity_correspondences() {
        let pts = vec![(0.0, 0.0), (10.0, 0.0), (10.0, 7.0), (0.0, 7.0), (3.0, 5.0)];
        let h = estimate_homography(&pts, &pts).unwrap();
        let id = Homography3::identity();
        for i in 0..9 {
            assert!((h.h[i] - id.h[i]).abs() < 1e-10, "entry {i}: {}", h.h[i]);
        }
    }

    #[test]
    fn pure_translation() {
        let dst: Vec<(f64, f64)> = UNIT_SQUARE.iter().map(|&(x, y)| (x + 5.0, y + 7.0)).collect();
        let h = estimate_homography(&UNIT_SQUARE, &dst).unwrap();
        let expected = [1.0, 0.0, 5.0, 0.0, 1.0, 7.0, 0.0, 0.0, 1.0];
        for i in 0..9 {
            assert!((h.h[i] - expected[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn recovers_random_homography_from_twenty_points() {
        let truth = Homography3::from_array([
            0.9, 0.1, 12.0, -0.08, 1.05, -4.0, 1.5e-4, -2.0e-4, 1.0,
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src: Vec<(f64, f64)> =
            (0..20).map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..80.0))).collect();
        let dst: Vec<(f64, f64)> = src.iter().map(|&(x, y)| truth.apply(x, y)).collect();
        let est = estimate_homography(&src, &dst).unwrap();
        for &(x, y) in &src {
            let (u, v) = est.apply(x, y);
            let (tu, tv) = truth.apply(x, y);
            let err = ((u - tu).powi(2) + (v - tv).powi(2)).sqrt();
            assert!(err < 1e-6, "reprojection error {err}");
        }
    }

    #[test]
    fn exact_four_point_fit_below_1e9() {
        let truth =
            Homography3::from_array([1.2, -0.05, 3.0, 0.04, 0.95, -1.0, 1e-4, 5e-5, 1.0]).unwrap();
        let src = [(0.0, 0.0), (50.0, 2.0), (48.0, 40.0), (-1.0, 38.0)];
        let dst: Vec<(f64, f64)> = src.iter().map(|&(x, y)| truth.apply(x, y)).collect();
        let est = estimate_homography(&src, &dst).unwrap();
        for (i, &(x, y)) in src.iter().enumerate() {
            let (u, v) = est.apply(x, y);
            let err = ((u - dst[i].0).powi(2) + (v - dst[i].1).powi(2)).sqrt();
            assert!(err < 1e-9, "point {i}: error {err}");
        }
    }

    #[test]
    fn collinear_points_rejected() {
        let src = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)];
        let dst = [(0.0, 1.0), (1.0, 1.0), (2.0, 1.0), (3.0, 1.0)];
        assert!(matches!(
            estimate_homography(&src, &dst),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn scaling_inputs_conjugates_the_estimate() {
        let truth =
            Homography3::from_array([1.1, 0.02, 5.0, -0.03, 0.9, 2.0, 2e-4, -1e-4, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let src: Vec<(f64, f64)> =
            (0..12).map(|_| (rng.random_range(0.0..40.0), rng.random_range(0.0..40.0))).collect();
        let dst: Vec<(f64, f64)> = src.iter().map(|&(x, y)| truth.apply(x, y)).collect();
        let base = estimate_homography(&src, &dst).unwrap();

        let scale = |pts: &[(f64, f64)]| pts.iter().map(|&(x, y)| (10.0 * x, 10.0 * y)).collect::<Vec<_>>();
        let scaled = estimate_homography(&scale(&src), &scale(&dst)).unwrap();
        // Conjugation by S = diag(10,10,1): H' = S·H·S⁻¹.
        let s = Homography3::from_array([10.0, 0.0, 0.0, 0.0, 10.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let expected = s.compose(&base).unwrap().compose(&s.inverse().unwrap()).unwrap();
        for i in 0..9 {
            assert!(
                (scaled.h[i] - expected.h[i]).abs() < 1e-8,
                "entry {i}: {} vs {}",
                scaled.h[i],
                expected.h[i]
            );
        }
    }

    fn gradient_image(w: usize, h: usize) -> ImagePlane {
        // Smooth so interpolation error stays far below the tolerances.
        let data: Vec<f32> = (0..h)
            .flat_map(|y| {
                (0..w).map(move |x| {
                    110.0 + 60.0 * (x as f32 / 7.0).sin() + 45.0 * (y as f32 / 5.0).cos()
                })
            })
            .collect();
        ImagePlane::new(w, h, 1, Role::Gray, data).unwrap()
    }

    #[test]
    fn warp_identity_preserves_image() {
        let img = gradient_image(24, 18);
        let out = warp_perspective(&img, &Homography3::identity(), 24, 18).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn warp_translation_moves_spike() {
        let mut img = ImagePlane::constant(16, 16, 1, Role::Gray, 0.0).unwrap();
        img.set(4, 5, 0, 200.0);
        let h = Homography3::from_array([1.0, 0.0, 3.0, 0.0, 1.0, 2.0, 0.0, 0.0, 1.0]).unwrap();
        let out = warp_perspective(&img, &h, 16, 16).unwrap();
        assert_eq!(out.get(7, 7, 0), 200.0);
        assert_eq!(out.get(4, 5, 0), 0.0);
    }

    #[test]
    fn warp_round_trip_interior_error_small() {
        let img = gradient_image(40, 32);
        let h = Homography3::from_array([1.05, 0.03, 2.0, -0.02, 0.97, 1.5, 1e-4, -5e-5, 1.0]).unwrap();
        let fwd = warp_perspective(&img, &h, 48, 40).unwrap();
        let back = warp_perspective(&fwd, &h.inverse().unwrap(), 40, 32).unwrap();
        let mut err = 0.0;
        let mut n = 0;
        for y in 6..26 {
            for x in 6..34 {
                err += (back.get(x, y, 0) - img.get(x, y, 0)).abs() as f64;
                n += 1;
            }
        }
        let mean = err / n as f64;
        assert!(mean < 0.5, "round-trip mean abs error {mean}");
    }

    #[test]
    fn warp_composition_matches_single_warp() {
        let img = gradient_image(40, 32);
        let h1 = Homography3::from_array([1.02, 0.01, 1.0, -0.01, 0.99, 0.5, 5e-5, 0.0, 1.0]).unwrap();
        let h2 = Homography3::from_array([0.98, -0.02, 2.0, 0.02, 1.01, -1.0, 0.0, 5e-5, 1.0]).unwrap();
        let two_step = warp_perspective(&warp_perspective(&img, &h1, 48, 40).unwrap(), &h2, 48, 40).unwrap();
        let one_step = warp_perspective(&img, &h2.compose(&h1).unwrap(), 48, 40).unwrap();
        // Compare a window whose preimages under both paths stay inside the
        // painted content, away from the zero-filled canvas margins.
        let mut err = 0.0;
        let mut n = 0;
        for y in 8..28 {
            for x in 8..36 {
                err += (two_step.get(x, y, 0) - one_step.get(x, y, 0)).abs() as f64;
                n += 1;
            }
        }
        let mean = err / n as f64;
        assert!(mean < 1.0, "composition mean abs error {mean}");
    }
}
