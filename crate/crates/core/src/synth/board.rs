//! Chessboard renders for camera calibration and cross-camera
//! registration: a plane-homography board renderer with optional lens
//! distortion and supersampled edges, plus seeded pose sampling that
//! keeps the full board inside the frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SceneGeometry;
use crate::calib::{distort_point, undistort_point, BoardSpec, CameraModel, CornerGrid, Homography3};
use crate::error::{Error, Result};
use crate::imaging::{ImagePlane, Role};

/// Two-level rendering palette for a board view.
#[derive(Debug, Clone, Copy)]
pub struct BoardPalette {
    pub light: f32,
    pub dark: f32,
    pub background: f32,
    pub role: Role,
}

/// Heated board seen by the thermal camera: light squares warm, dark
/// squares and background near ambient.
pub const THERMAL_BOARD: BoardPalette =
    BoardPalette { light: 40.0, dark: 25.0, background: 22.0, role: Role::Thermal };

/// The same board photographed by the RGB camera, as a luma plane.
pub const GRAY_BOARD: BoardPalette =
    BoardPalette { light: 235.0, dark: 40.0, background: 128.0, role: Role::Gray };

const SUPERSAMPLE: usize = 5;

/// Renders a chessboard lying in a plane, `h` mapping board-plane
/// millimeters (origin at the outer corner) to undistorted pixel
/// coordinates. When a camera is given its distortion applies on top of
/// the pinhole mapping. Edges are supersampled 5×5.
pub fn render_board_plane(
    h: &Homography3,
    cam: Option<&CameraModel>,
    board: &BoardSpec,
    width: usize,
    height: usize,
    palette: &BoardPalette,
) -> Result<ImagePlane> {
    let inv = h.inverse()?;
    let ext_x = board.squares_x as f64 * board.square_mm;
    let ext_y = board.squares_y as f64 * board.square_mm;
    let step = 1.0 / SUPERSAMPLE as f64;
    let base = -0.5 + step / 2.0;
    let mut data = vec![0.0f32; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0f64;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + base + sx as f64 * step;
                    let py = y as f64 + base + sy as f64 * step;
                    let (ux, uy) = match cam {
                        Some(c) => undistort_point(c, px, py)?,
                        None => (px, py),
                    };
                    let (bx, by) = inv.apply(ux, uy);
                    acc += if bx >= 0.0 && bx < ext_x && by >= 0.0 && by < ext_y {
                        let ix = (bx / board.square_mm) as usize;
                        let iy = (by / board.square_mm) as usize;
                        if (ix + iy) % 2 == 0 {
                            palette.light as f64
                        } else {
                            palette.dark as f64
                        }
                    } else {
                        palette.background as f64
                    };
                }
            }
            data[y * width + x] = (acc / (SUPERSAMPLE * SUPERSAMPLE) as f64) as f32;
        }
    }
    ImagePlane::new(width, height, 1, palette.role, data)
}

/// Projects the internal corners through the plane homography (and the
/// distortion when a camera is given), in the row-major model order.
pub fn true_board_corners(
    h: &Homography3,
    cam: Option<&CameraModel>,
    board: &BoardSpec,
) -> Result<CornerGrid> {
    let points = board
        .model_points_mm()
        .into_iter()
        .map(|(mx, my)| {
            let (ux, uy) = h.apply(mx, my);
            match cam {
                Some(c) => distort_point(c, ux, uy),
                None => (ux, uy),
            }
        })
        .collect();
    CornerGrid::new(board.corner_rows(), board.corner_cols(), points)
}

/// A rendered calibration view together with its exact corner positions.
#[derive(Debug, Clone)]
pub struct BoardView {
    pub image: ImagePlane,
    pub corners: CornerGrid,
    /// Board plane (mm) → undistorted pixels.
    pub homography: Homography3,
}

/// Renders `n_views` hand-held poses of the heated board in front of the
/// thermal camera: random tilts, in-plane rotation and standoff, with
/// every pose checked to keep the whole board inside the frame at a
/// detectable scale.
pub fn render_chessboard_views(
    cam: &CameraModel,
    n_views: usize,
    seed: u64,
    width: usize,
    height: usize,
) -> Result<Vec<BoardView>> {
    if n_views == 0 {
        return Err(Error::Domain("n_views must be at least 1".into()));
    }
    cam.validate(width, height)?;
    let board = BoardSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut views = Vec::with_capacity(n_views);
    for _ in 0..n_views {
        let h = sample_board_pose(cam, &board, width, height, &mut rng)?;
        let image = render_board_plane(&h, Some(cam), &board, width, height, &THERMAL_BOARD)?;
        let corners = true_board_corners(&h, Some(cam), &board)?;
        views.push(BoardView { image, corners, homography: h });
    }
    Ok(views)
}

/// Samples a pose whose projection keeps the full board inside the frame
/// with adjacent corners far enough apart for subpixel detection.
fn sample_board_pose(
    cam: &CameraModel,
    board: &BoardSpec,
    width: usize,
    height: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Homography3> {
    let ext_x = board.squares_x as f64 * board.square_mm;
    let ext_y = board.squares_y as f64 * board.square_mm;
    // Standoff range placing the board width at roughly 75–90% of the
    // frame for the camera's focal length.
    let nominal = ext_x * cam.fx / (0.82 * width as f64);
    for _ in 0..500 {
        let ax = rng.random_range(-0.25..0.25);
        let ay = rng.random_range(-0.25..0.25);
        let az = rng.random_range(-0.20..0.20);
        let tz = nominal * rng.random_range(0.95..1.12);
        let tx = rng.random_range(-0.04..0.04) * tz;
        let ty = rng.random_range(-0.04..0.04) * tz;
        let Some(h) = pose_homography(cam, board, ax, ay, az, (tx, ty, tz)) else {
            continue;
        };
        if pose_in_frame(&h, cam, board, ext_x, ext_y, width, height) {
            return Ok(h);
        }
    }
    Err(Error::BoardOutOfFrame)
}

/// Pinhole homography of the board plane for rotation angles and a
/// translation of the board center: H = K·[r1 r2 t̃].
fn pose_homography(
    cam: &CameraModel,
    board: &BoardSpec,
    ax: f64,
    ay: f64,
    az: f64,
    t: (f64, f64, f64),
) -> Option<Homography3> {
    let (sx, cx) = ax.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sz, cz) = az.sin_cos();
    // R = Rz(az)·Ry(ay)·Rx(ax), columns r1, r2.
    let r1 = [cz * cy, sz * cy, -sy];
    let r2 = [cz * sy * sx - sz * cx, sz * sy * sx + cz * cx, cy * sx];
    let half = (board.squares_x as f64 * board.square_mm / 2.0, board.squares_y as f64 * board.square_mm / 2.0);
    let tt = [
        t.0 - half.0 * r1[0] - half.1 * r2[0],
        t.1 - half.0 * r1[1] - half.1 * r2[1],
        t.2 - half.0 * r1[2] - half.1 * r2[2],
    ];
    let k = |v: [f64; 3]| {
        [cam.fx * v[0] + cam.cx * v[2], cam.fy * v[1] + cam.cy * v[2], v[2]]
    };
    let (c1, c2, c3) = (k(r1), k(r2), k(tt));
    Homography3::from_array([c1[0], c2[0], c3[0], c1[1], c2[1], c3[1], c1[2], c2[2], c3[2]]).ok()
}

fn pose_in_frame(
    h: &Homography3,
    cam: &CameraModel,
    board: &BoardSpec,
    ext_x: f64,
    ext_y: f64,
    width: usize,
    height: usize,
) -> bool {
    let margin = 3.0;
    for &(bx, by) in &[(0.0, 0.0), (ext_x, 0.0), (ext_x, ext_y), (0.0, ext_y)] {
        let (ux, uy) = h.apply(bx, by);
        let (px, py) = distort_point(cam, ux, uy);
        if px < margin || py < margin || px > width as f64 - 1.0 - margin || py > height as f64 - 1.0 - margin
        {
            return false;
        }
    }
    // Adjacent internal corners must stay resolvable.
    let pts: Vec<(f64, f64)> = board
        .model_points_mm()
        .iter()
        .map(|&(mx, my)| {
            let (ux, uy) = h.apply(mx, my);
            distort_point(cam, ux, uy)
        })
        .collect();
    let cols = board.corner_cols();
    for r in 0..board.corner_rows() {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols && dist(pts[i], pts[i + 1]) < 8.0 {
                return false;
            }
            if r + 1 < board.corner_rows() && dist(pts[i], pts[i + cols]) < 8.0 {
                return false;
            }
        }
    }
    true
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Simultaneous views of one board resting on the working plane, seen by
/// both cameras; used to estimate the thermal→RGB registration.
#[derive(Debug, Clone)]
pub struct RegistrationViews {
    pub thermal: ImagePlane,
    pub rgb: ImagePlane,
    /// Board plane (mm) → RGB pixels.
    pub board_to_rgb: Homography3,
    /// The print that was rendered, defining the corner grid shape.
    pub board: BoardSpec,
}

/// Renders the registration pair: a large-print board flat on the
/// working plane, roughly centered, with a small seeded rotation and
/// offset. The print is sized so its squares stay comfortably above the
/// corner detector's resolution floor in the thermal frame.
pub fn render_registration_views(geometry: &SceneGeometry, seed: u64) -> Result<RegistrationViews> {
    let board = BoardSpec { squares_y: 8, square_mm: 32.0, ..BoardSpec::default() };
    let ext_x = board.squares_x as f64 * board.square_mm;
    let ext_y = board.squares_y as f64 * board.square_mm;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let to_rgb_px = geometry.rgb_w as f64 / crate::synth::SCENE_WIDTH_MM;
    for _ in 0..100 {
        let ang = rng.random_range(-0.015..0.015f64);
        let cx = geometry.rgb_w as f64 / 2.0 + rng.random_range(-3.0..3.0) * to_rgb_px;
        let cy = geometry.rgb_h as f64 / 2.0 + rng.random_range(-3.0..3.0) * to_rgb_px;
        let (s, c) = ang.sin_cos();
        let sc = to_rgb_px;
        let tx = cx - sc * (c * ext_x / 2.0 - s * ext_y / 2.0);
        let ty = cy - sc * (s * ext_x / 2.0 + c * ext_y / 2.0);
        let Ok(board_to_rgb) =
            Homography3::from_array([sc * c, -sc * s, tx, sc * s, sc * c, ty, 0.0, 0.0, 1.0])
        else {
            continue;
        };
        let board_to_thermal = geometry.thermal_to_rgb.inverse()?.compose(&board_to_rgb)?;
        let rgb_ok = corners_inside(&board_to_rgb, None, ext_x, ext_y, geometry.rgb_w, geometry.rgb_h);
        let th_ok = corners_inside(
            &board_to_thermal,
            Some(&geometry.camera),
            ext_x,
            ext_y,
            geometry.thermal_w,
            geometry.thermal_h,
        );
        if !(rgb_ok && th_ok) {
            continue;
        }
        let rgb = render_board_plane(&board_to_rgb, None, &board, geometry.rgb_w, geometry.rgb_h, &GRAY_BOARD)?;
        let thermal = render_board_plane(
            &board_to_thermal,
            Some(&geometry.camera),
            &board,
            geometry.thermal_w,
            geometry.thermal_h,
            &THERMAL_BOARD,
        )?;
        return Ok(RegistrationViews { thermal, rgb, board_to_rgb, board });
    }
    Err(Error::BoardOutOfFrame)
}

fn corners_inside(
    h: &Homography3,
    cam: Option<&CameraModel>,
    ext_x: f64,
    ext_y: f64,
    width: usize,
    height: usize,
) -> bool {
    [(0.0, 0.0), (ext_x, 0.0), (ext_x, ext_y), (0.0, ext_y)].iter().all(|&(bx, by)| {
        let (ux, uy) = h.apply(bx, by);
        let (px, py) = match cam {
            Some(c) => distort_point(c, ux, uy),
            None => (ux, uy),
        };
        px >= 2.0 && py >= 2.0 && px <= width as f64 - 3.0 && py <= height as f64 - 3.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::{detect_chessboard_corners, estimate_intrinsics, register_thermal_to_rgb};

    fn test_cam() -> CameraModel {
        CameraModel { fx: 160.0, fy: 158.0, cx: 63.0, cy: 49.0, k1: -0.15, k2: 0.03 }
    }

    #[test]
    fn same_seed_renders_identical_views() {
        let cam = test_cam();
        let a = render_chessboard_views(&cam, 2, 42, 128, 96).unwrap();
        let b = render_chessboard_views(&cam, 2, 42, 128, 96).unwrap();
        assert_eq!(a.len(), 2);
        for (va, vb) in a.iter().zip(&b) {
            assert_eq!(va.image, vb.image);
            assert_eq!(va.corners.points, vb.corners.points);
        }
    }

    #[test]
    fn fronto_parallel_pinhole_corners_form_an_affine_lattice() {
        let cam = CameraModel { fx: 160.0, fy: 160.0, cx: 64.0, cy: 48.0, k1: 0.0, k2: 0.0 };
        let board = BoardSpec::default();
        let h = pose_homography(&cam, &board, 0.0, 0.0, 0.0, (0.0, 0.0, 520.0)).unwrap();
        let grid = true_board_corners(&h, Some(&cam), &board).unwrap();
        // Collinearity of every row: the middle points sit on the line of
        // the row's endpoints to well under 1e-6 px.
        for r in 0..grid.rows {
            let row = &grid.points[r * grid.cols..(r + 1) * grid.cols];
            let (x0, y0) = row[0];
            let (x1, y1) = row[grid.cols - 1];
            let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
            for &(px, py) in row {
                let resid = ((x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)).abs() / len;
                assert!(resid < 1e-6, "row {r} residual {resid}");
            }
        }
    }

    #[test]
    fn radial_distortion_displaces_corners_by_the_closed_form_shift() {
        let pin = CameraModel { fx: 160.0, fy: 160.0, cx: 64.0, cy: 48.0, k1: 0.0, k2: 0.0 };
        let barrel = CameraModel { k1: -0.2, ..pin };
        let board = BoardSpec::default();
        let h = pose_homography(&pin, &board, 0.1, -0.05, 0.02, (5.0, -4.0, 540.0)).unwrap();
        let straight = true_board_corners(&h, Some(&pin), &board).unwrap();
        let bent = true_board_corners(&h, Some(&barrel), &board).unwrap();
        for (&(ux, uy), &(dx, dy)) in straight.points.iter().zip(&bent.points) {
            let want = distort_point(&barrel, ux, uy);
            assert!((dx - want.0).abs() < 1e-12 && (dy - want.1).abs() < 1e-12);
            // Barrel distortion pulls points toward the principal point.
            let r_und = ((ux - 64.0).powi(2) + (uy - 48.0).powi(2)).sqrt();
            let r_dis = ((dx - 64.0).powi(2) + (dy - 48.0).powi(2)).sqrt();
            assert!(r_dis <= r_und + 1e-12);
        }
    }

    #[test]
    fn rendered_views_are_detected_within_half_a_pixel() {
        let cam = test_cam();
        let views = render_chessboard_views(&cam, 3, 7, 128, 96).unwrap();
        for (i, v) in views.iter().enumerate() {
            let grid = detect_chessboard_corners(&v.image, 5, 11).unwrap();
            let mut max_err = 0.0f64;
            for (p, t) in grid.points.iter().zip(&v.corners.points) {
                max_err = max_err.max(dist(*p, *t));
            }
            assert!(max_err <= 0.5, "view {i}: max corner error {max_err}");
        }
    }

    #[test]
    fn intrinsics_recover_from_rendered_views() {
        // End-to-end: render -> detect -> calibrate. Parameter accuracy is
        // bounded by corner localization noise (~0.05 px), so the bands here
        // are looser than the exact-correspondence recovery guarantees; the
        // reprojection RMS is the sharper end-to-end gate.
        let cam = test_cam();
        let views = render_chessboard_views(&cam, 10, 11, 128, 96).unwrap();
        let grids: Vec<CornerGrid> =
            views.iter().map(|v| detect_chessboard_corners(&v.image, 5, 11).unwrap()).collect();
        let result = estimate_intrinsics(&grids, &BoardSpec::default()).unwrap();
        let est = result.camera;
        assert!(result.rms_px < 0.15, "reprojection rms {}", result.rms_px);
        assert!((est.fx - cam.fx).abs() / cam.fx < 0.015, "fx {} vs {}", est.fx, cam.fx);
        assert!((est.fy - cam.fy).abs() / cam.fy < 0.015, "fy {} vs {}", est.fy, cam.fy);
        assert!((est.cx - cam.cx).abs() / cam.cx < 0.015, "cx {} vs {}", est.cx, cam.cx);
        assert!((est.cy - cam.cy).abs() / cam.cy < 0.015, "cy {} vs {}", est.cy, cam.cy);
        assert!((est.k1 - cam.k1).abs() < 0.03, "k1 {} vs {}", est.k1, cam.k1);
    }

    #[test]
    fn registration_views_recover_the_true_homography() {
        let geometry = SceneGeometry::sample_seeded(403, 302, 128, 96, 5).unwrap();
        let views = render_registration_views(&geometry, 9).unwrap();
        let reg = register_thermal_to_rgb(
            &views.thermal,
            &views.rgb,
            &geometry.camera,
            views.board.corner_rows(),
            views.board.corner_cols(),
        )
        .unwrap();
        // Transfer error against the true mapping, measured where the
        // mapping is consumed: thermal points that land inside the RGB
        // frame when warped.
        let mut max_err = 0.0f64;
        let mut checked = 0usize;
        for v in (0..96).step_by(8) {
            for u in (0..128).step_by(8) {
                let (ux, uy) = undistort_point(&geometry.camera, u as f64, v as f64).unwrap();
                let want = geometry.thermal_to_rgb.apply(ux, uy);
                if !(0.0..=402.0).contains(&want.0) || !(0.0..=301.0).contains(&want.1) {
                    continue;
                }
                let got = reg.homography.apply(ux, uy);
                max_err = max_err.max(dist(want, got));
                checked += 1;
            }
        }
        assert!(checked > 100, "evaluation grid too sparse: {checked}");
        assert!(max_err < 0.5, "registration transfer error {max_err}");
    }
}
