//! Chessboard corner detection scoped to synthetic renders: saddle-point
//! response, non-maximum suppression, projective grid ordering, and
//! gradient-orthogonality subpixel refinement. Also the thermal→RGB
//! registration that pairs detected grids from both cameras.

use super::{estimate_homography, undistort_point, CameraModel, CornerGrid, Homography3};
use crate::error::{Error, Result};
use crate::imaging::{ImagePlane, Role};

/// Homography plus the corner transfer error it achieved.
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub homography: Homography3,
    pub rms_px: f64,
}

/// Separable binomial smoothing ([1,4,6,4,1]/16 in each direction).
fn smooth(values: &[f32], w: usize, h: usize) -> Vec<f32> {
    const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let mut tmp = vec![0.0f32; values.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in K.iter().enumerate() {
                let sx = (x as isize + i as isize - 2).clamp(0, w as isize - 1) as usize;
                acc += k * values[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; values.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in K.iter().enumerate() {
                let sy = (y as isize + i as isize - 2).clamp(0, h as isize - 1) as usize;
                acc += k * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Clamped bilinear sample of a single-channel buffer.
fn bilin(img: &[f32], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let top = img[y0 * w + x0] as f64 * (1.0 - fx) + img[y0 * w + x1] as f64 * fx;
    let bot = img[y1 * w + x0] as f64 * (1.0 - fx) + img[y1 * w + x1] as f64 * fx;
    top + (bot - top) * fy
}

/// Iterative subpixel refinement: inside a 7×7 window that tracks the
/// fractional estimate, a corner is the point where every sampled
/// gradient is orthogonal to the offset toward it, giving the normal
/// equations `(Σ w g gᵀ) p = Σ w (g gᵀ) q`.
fn refine_subpixel(img: &[f32], w: usize, h: usize, start: (f64, f64)) -> (f64, f64) {
    const WIN: isize = 3;
    let mut cx = start.0;
    let mut cy = start.1;
    for _ in 0..12 {
        let margin = (WIN + 2) as f64;
        if cx < margin || cy < margin || cx > w as f64 - 1.0 - margin || cy > h as f64 - 1.0 - margin {
            break;
        }
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
        for dy in -WIN..=WIN {
            for dx in -WIN..=WIN {
                // Sample the window at fractional positions so it stays
                // centered on the current estimate (no rounding bias).
                let qx = cx + dx as f64;
                let qy = cy + dy as f64;
                let gx = (bilin(img, w, h, qx + 1.0, qy) - bilin(img, w, h, qx - 1.0, qy)) * 0.5;
                let gy = (bilin(img, w, h, qx, qy + 1.0) - bilin(img, w, h, qx, qy - 1.0)) * 0.5;
                let wgt = (-((dx * dx + dy * dy) as f64) / 8.0).exp();
                a11 += wgt * gx * gx;
                a12 += wgt * gx * gy;
                a22 += wgt * gy * gy;
                b1 += wgt * (gx * gx * qx + gx * gy * qy);
                b2 += wgt * (gx * gy * qx + gy * gy * qy);
            }
        }
        let det = a11 * a22 - a12 * a12;
        if det.abs() < 1e-9 {
            break;
        }
        let nx = (a22 * b1 - a12 * b2) / det;
        let ny = (a11 * b2 - a12 * b1) / det;
        let step = ((nx - cx).powi(2) + (ny - cy).powi(2)).sqrt();
        // A jump out of the saddle's basin means the window lost the
        // corner; keep the previous estimate.
        if step > 2.0 {
            break;
        }
        cx = nx;
        cy = ny;
        if step < 1e-6 {
            break;
        }
    }
    if ((cx - start.0).powi(2) + (cy - start.1).powi(2)).sqrt() > 3.0 {
        start
    } else {
        (cx, cy)
    }
}

/// Locates the `rows × cols` internal corners of a rendered chessboard
/// to subpixel accuracy, row-major from the image-space top-left corner.
/// Scoped to synthetic renders: squares must project to at least ~8 px.
pub fn detect_chessboard_corners(img: &ImagePlane, rows: usize, cols: usize) -> Result<CornerGrid> {
    if img.channels != 1 {
        return Err(Error::RoleMismatch { expected: "gray|thermal", got: img.role.as_str() });
    }
    if rows < 2 || cols < 2 {
        return Err(Error::DimensionMismatch("corner grid needs rows, cols >= 2".into()));
    }
    let (w, h) = (img.width, img.height);
    let lo = img.data.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = img.data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if hi - lo < 1e-6 {
        return Err(Error::CornersNotFound("flat image".into()));
    }
    // Contrast-normalize so gray renders and thermal frames share one
    // response scale; the saddle response itself is sign-free.
    let norm: Vec<f32> = img.data.iter().map(|&v| (v - lo) / (hi - lo) * 255.0).collect();
    let sm = smooth(&norm, w, h);

    const D: usize = 3;
    let mut resp = vec![0.0f32; w * h];
    for y in D..h - D {
        for x in D..w - D {
            let tl = sm[(y - D) * w + (x - D)];
            let br = sm[(y + D) * w + (x + D)];
            let tr = sm[(y - D) * w + (x + D)];
            let bl = sm[(y + D) * w + (x - D)];
            resp[y * w + x] = (tl + br - tr - bl).abs();
        }
    }
    let max_resp = resp.iter().cloned().fold(0.0f32, f32::max);
    if max_resp < 20.0 {
        return Err(Error::CornersNotFound("no saddle response above noise floor".into()));
    }

    // Non-maximum suppression at 60% of the peak: internal saddles score
    // about twice any board-outline junction, so this keeps exactly the
    // internal lattice on a clean render.
    let thresh = 0.6 * max_resp;
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    let r = D as isize;
    for y in D..h - D {
        for x in D..w - D {
            let v = resp[y * w + x];
            if v < thresh {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let q = ((y as isize + dy) as usize) * w + (x as isize + dx) as usize;
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if resp[q] > v || (earlier && resp[q] == v) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                candidates.push((x as f64, y as f64));
            }
        }
    }
    let needed = rows * cols;
    if candidates.len() < needed {
        return Err(Error::CornersNotFound(format!(
            "{} saddle points found, {needed} needed",
            candidates.len()
        )));
    }
    if candidates.len() > 2 * needed {
        return Err(Error::CornersNotFound(format!(
            "{} saddle points found, {needed} expected — not a clean board render",
            candidates.len()
        )));
    }

    let refined: Vec<(f64, f64)> = candidates.iter().map(|&c| refine_subpixel(&sm, w, h, c)).collect();
    let ordered = order_grid(&refined, rows, cols)?;
    CornerGrid::new(rows, cols, ordered)
}

/// Fits the candidate cloud to a `rows × cols` projective lattice and
/// returns the points row-major from the image-space top-left corner.
fn order_grid(pts: &[(f64, f64)], rows: usize, cols: usize) -> Result<Vec<(f64, f64)>> {
    // Extremes of x±y give the four lattice corners for any near-upright
    // view of the rectangular grid.
    let by = |f: fn(&(f64, f64)) -> f64| {
        move |pts: &[(f64, f64)]| {
            *pts.iter()
                .min_by(|a, b| f(a).partial_cmp(&f(b)).unwrap())
                .expect("non-empty candidates")
        }
    };
    let tl = by(|p| p.0 + p.1)(pts);
    let br = by(|p| -(p.0 + p.1))(pts);
    let tr = by(|p| p.1 - p.0)(pts);
    let bl = by(|p| p.0 - p.1)(pts);

    let cols_f = (cols - 1) as f64;
    let rows_f = (rows - 1) as f64;
    // The wide lattice axis may run along either image diagonal pair;
    // try both assignments and keep the one that forms a bijection.
    let assignments = [[tl, tr, br, bl], [tl, bl, br, tr]];
    'attempt: for corners in assignments {
        let lattice = [(0.0, 0.0), (cols_f, 0.0), (cols_f, rows_f), (0.0, rows_f)];
        let Ok(mut h) = estimate_homography(&lattice, &corners) else {
            continue;
        };
        // The four-corner fit is only a seed: lens distortion bends the
        // lattice, so snap the inliers it explains, refit from all of
        // them, and snap again until every cell is filled.
        for _round in 0..4 {
            let Ok(inv) = h.inverse() else {
                continue 'attempt;
            };
            let mut grid: Vec<Option<(f64, f64)>> = vec![None; rows * cols];
            let mut lattice_pts: Vec<(f64, f64)> = Vec::new();
            let mut image_pts: Vec<(f64, f64)> = Vec::new();
            for &p in pts {
                let (u, v) = inv.apply(p.0, p.1);
                let cu = u.round();
                let cv = v.round();
                if (u - cu).abs() > 0.35
                    || (v - cv).abs() > 0.35
                    || cu < 0.0
                    || cv < 0.0
                    || cu > cols_f
                    || cv > rows_f
                {
                    continue;
                }
                let cell = cv as usize * cols + cu as usize;
                if grid[cell].is_some() {
                    continue 'attempt;
                }
                grid[cell] = Some(p);
                lattice_pts.push((cu, cv));
                image_pts.push(p);
            }
            if grid.iter().all(Option::is_some) {
                let mut out: Vec<(f64, f64)> = grid.into_iter().map(Option::unwrap).collect();
                normalize_orientation(&mut out, rows, cols);
                return Ok(out);
            }
            if lattice_pts.len() < 8 {
                continue 'attempt;
            }
            let Ok(refit) = estimate_homography(&lattice_pts, &image_pts) else {
                continue 'attempt;
            };
            h = refit;
        }
    }
    Err(Error::AmbiguousOrdering(format!("candidates do not fit a {rows}x{cols} lattice")))
}

/// Fixed-corner rule: anchor the ordering at the image-space top-left
/// corner, rows reading left→right and top→bottom. Any view of the board
/// then gets a single canonical ordering regardless of how the lattice
/// fit happened to label its axes.
fn normalize_orientation(grid: &mut Vec<(f64, f64)>, rows: usize, cols: usize) {
    let row_dir_x = grid[cols - 1].0 - grid[0].0;
    if row_dir_x < 0.0 {
        for r in 0..rows {
            grid[r * cols..(r + 1) * cols].reverse();
        }
    }
    let col_dir_y = grid[(rows - 1) * cols].1 - grid[0].1;
    if col_dir_y < 0.0 {
        let mut flipped = Vec::with_capacity(grid.len());
        for r in (0..rows).rev() {
            flipped.extend_from_slice(&grid[r * cols..(r + 1) * cols]);
        }
        *grid = flipped;
    }
}

/// Registers the thermal camera to the RGB camera from one simultaneous
/// board view each: detect corners in both, undistort the thermal grid,
/// and fit the thermal→RGB homography.
pub fn register_thermal_to_rgb(
    thermal_board: &ImagePlane,
    rgb_board: &ImagePlane,
    cam: &CameraModel,
    rows: usize,
    cols: usize,
) -> Result<RegistrationResult> {
    let tg = detect_chessboard_corners(thermal_board, rows, cols)?;
    let rg = detect_chessboard_corners(rgb_board, rows, cols)?;
    let undistorted: Vec<(f64, f64)> = tg
        .points
        .iter()
        .map(|&(x, y)| undistort_point(cam, x, y))
        .collect::<Result<_>>()?;
    let homography = estimate_homography(&undistorted, &rg.points)?;
    let mut sq = 0.0;
    for (src, dst) in undistorted.iter().zip(&rg.points) {
        let (u, v) = homography.apply(src.0, src.1);
        sq += (u - dst.0).powi(2) + (v - dst.1).powi(2);
    }
    let rms_px = (sq / undistorted.len() as f64).sqrt();
    Ok(RegistrationResult { homography, rms_px })
}

impl ImagePlane {
    /// Luma view of an RGB image (gray role), used to run corner
    /// detection on white-light renders.
    pub fn to_luma(&self) -> Result<ImagePlane> {
        if self.channels == 1 {
            return Ok(ImagePlane::new(self.width, self.height, 1, Role::Gray, self.data.clone())?);
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2])
            .collect();
        ImagePlane::new(self.width, self.height, 1, Role::Gray, data)
    }
}
