//! Synthetic scene and dataset generation: parametric hands on a desk
//! plane photographed under white light and UV (with a fluorescent rub
//! pattern and dim speckle distractors), a registered low-resolution
//! thermal camera with radial distortion observing evaporative cooling on
//! a rewarming clock, and the participant/task plans that tie the
//! rendered bundles into a dataset.

pub mod board;
pub mod hand;
pub mod tasks;

pub use board::{
    render_board_plane, render_chessboard_views, render_registration_views, true_board_corners,
    BoardPalette, BoardView, RegistrationViews,
};
pub use hand::HandPose;
pub use tasks::{coverage_pattern, task_spec, Chirality, TaskKind, TaskSpec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calib::{sample_bilinear, undistort_point, CameraModel, Homography3};
use crate::error::{Error, Result};
use crate::eval::{HandSide, TIME_OFFSETS_S};
use crate::groundtruth::{
    build_ground_truth, GroundTruthMasks, ThresholdConfig, WristLine, WristSpan,
};
use crate::imaging::{BinaryMask, ImagePlane, Role};

/// Physical width imaged by the RGB camera, in millimeters; sized so two
/// large hands fit side by side with margin.
pub const SCENE_WIDTH_MM: f64 = 403.0;

/// Skin under white light.
const SKIN_RGB: [f32; 3] = [205.0, 160.0, 140.0];
/// Desk surface under white light: low chroma, near-neutral.
const BG_RGB: [f32; 3] = [120.0, 120.0, 124.0];
/// Desk surface under the UV lamp.
const UV_BG_RGB: [f32; 3] = [10.0, 10.0, 14.0];
/// Unrubbed skin under the UV lamp: dim and violet-ish, below the
/// brightness gate and outside the fluorescence hue band.
const UV_HAND_RGB: [f32; 3] = [50.0, 45.0, 58.0];
/// Fluorescing dye: bright green, inside the hue band.
const FLUOR_RGB: [f32; 3] = [45.0, 215.0, 55.0];
/// Speckle distractor: its hue sits inside the fluorescence band but its
/// brightness stays below the gate, so only the gate excludes it.
const SPECKLE_RGB: [f32; 3] = [20.0, 52.0, 24.0];

/// Evaporative-cooling model of the thermal signature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThermalParams {
    pub skin_temp_c: f64,
    pub ambient_temp_c: f64,
    /// Temperature drop of freshly rubbed skin at time zero.
    pub delta_cool_c: f64,
    /// Rewarming time constant: the drop decays as exp(−t/τ).
    pub tau_rewarm_s: f64,
    /// Lateral heat diffusion, as Gaussian σ growth in thermal pixels per
    /// second of elapsed time.
    pub diffusion_px_per_s: f64,
    /// Sensor noise, °C per pixel per frame.
    pub noise_sd_c: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        Self {
            skin_temp_c: 33.0,
            ambient_temp_c: 22.0,
            delta_cool_c: 3.0,
            tau_rewarm_s: 90.0,
            diffusion_px_per_s: 0.02,
            noise_sd_c: 0.08,
        }
    }
}

impl ThermalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ambient_temp_c < self.skin_temp_c && self.skin_temp_c <= 60.0) {
            return Err(Error::Domain(format!(
                "need ambient < skin ≤ 60 °C, got ambient {} skin {}",
                self.ambient_temp_c, self.skin_temp_c
            )));
        }
        if self.delta_cool_c < 0.0 || self.delta_cool_c > self.ambient_temp_c {
            return Err(Error::Domain(format!(
                "cooling drop {} must lie in [0, ambient]",
                self.delta_cool_c
            )));
        }
        if self.tau_rewarm_s <= 0.0 || self.diffusion_px_per_s < 0.0 || self.noise_sd_c < 0.0 {
            return Err(Error::Domain(
                "rewarm constant must be positive; diffusion and noise non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Photometric switches of the RGB renders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    /// Per-channel Gaussian noise on both RGB shots, gray levels.
    pub rgb_noise_sd: f64,
    /// Paint a few dim speckle distractors onto the UV shot.
    pub speckle: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { rgb_noise_sd: 1.2, speckle: true }
    }
}

/// The fixed two-camera rig of one recording session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    /// Thermal camera intrinsics and distortion.
    pub camera: CameraModel,
    /// Undistorted thermal pixels → RGB pixels.
    pub thermal_to_rgb: Homography3,
    pub rgb_w: usize,
    pub rgb_h: usize,
    pub thermal_w: usize,
    pub thermal_h: usize,
}

impl SceneGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.rgb_w < 64 || self.rgb_h < 64 || self.thermal_w < 32 || self.thermal_h < 32 {
            return Err(Error::InvalidGeometry(format!(
                "frames too small: rgb {}x{} thermal {}x{}",
                self.rgb_w, self.rgb_h, self.thermal_w, self.thermal_h
            )));
        }
        self.camera.validate(self.thermal_w, self.thermal_h)?;
        self.thermal_to_rgb.inverse()?;
        Ok(())
    }

    /// Samples a plausible rig: mild barrel distortion on the thermal
    /// camera, and a near-similarity registration that keeps the whole
    /// RGB frame inside the thermal field of view.
    pub fn sample_seeded(
        rgb_w: usize,
        rgb_h: usize,
        thermal_w: usize,
        thermal_h: usize,
        seed: u64,
    ) -> Result<SceneGeometry> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fx = thermal_w as f64 * rng.random_range(1.20..1.30);
        let fy = fx * rng.random_range(0.99..1.01);
        let cx = thermal_w as f64 / 2.0 + rng.random_range(-2.0..2.0);
        let cy = thermal_h as f64 / 2.0 + rng.random_range(-2.0..2.0);
        let k1 = rng.random_range(-0.18..-0.12);
        let k2 = rng.random_range(0.02..0.04);
        let camera = CameraModel { fx, fy, cx, cy, k1, k2 };

        let scale = rgb_w as f64 / thermal_w as f64 * rng.random_range(1.06..1.10);
        let theta = rng.random_range(-0.015..0.015f64);
        let (s, c) = theta.sin_cos();
        let jx = rng.random_range(-3.0..3.0);
        let jy = rng.random_range(-3.0..3.0);
        let (tcx, tcy) = (thermal_w as f64 / 2.0, thermal_h as f64 / 2.0);
        let tx = rgb_w as f64 / 2.0 + jx - scale * (c * tcx - s * tcy);
        let ty = rgb_h as f64 / 2.0 + jy - scale * (s * tcx + c * tcy);
        let p6 = rng.random_range(-2e-5..2e-5);
        let p7 = rng.random_range(-2e-5..2e-5);
        let thermal_to_rgb = Homography3::from_array([
            scale * c,
            -scale * s,
            tx,
            scale * s,
            scale * c,
            ty,
            p6,
            p7,
            1.0,
        ])?;
        let geometry =
            SceneGeometry { camera, thermal_to_rgb, rgb_w, rgb_h, thermal_w, thermal_h };
        geometry.validate()?;
        Ok(geometry)
    }
}

/// Identity of one rendered bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub participant: u32,
    pub task: u8,
    pub hand_side: HandSide,
    pub hand_length_mm: f64,
    pub seed: u64,
}

/// Everything one recording of one task produces: the two studio shots,
/// the thermal baseline and its timed observations, and the exact truth
/// the renders were painted from.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub meta: BundleMeta,
    pub geometry: SceneGeometry,
    /// White-light RGB photograph.
    pub rgb_white: ImagePlane,
    /// UV-lamp RGB photograph with the fluorescing rub pattern.
    pub uv: ImagePlane,
    /// Thermal frame before the rub.
    pub thermal_baseline: ImagePlane,
    /// Thermal frames at each elapsed-time offset, in offset order.
    pub thermal_obs: Vec<ImagePlane>,
    /// Fraction of each thermal pixel covered by skin.
    pub sil_frac: ImagePlane,
    /// Fraction of each thermal pixel covered by the rub pattern.
    pub cov_frac: ImagePlane,
    /// Exact painted truth in RGB coordinates.
    pub truth: GroundTruthMasks,
    /// Wrist annotations in RGB coordinates, left hand first.
    pub wrists: WristLine,
}

impl SceneBundle {
    /// Runs the dye-extraction pipeline on this bundle's studio shots.
    pub fn extract_ground_truth(&self, cfg: &ThresholdConfig) -> Result<GroundTruthMasks> {
        build_ground_truth(&self.rgb_white, &self.uv, &self.wrists, cfg)
    }
}

/// Places the two hands in the frame: wrists near the lower quarter of
/// the image, forearms leaving through the bottom edge, thumbs toward
/// each other for dorsal views and away for palmar views.
fn place_hands(
    geometry: &SceneGeometry,
    side: HandSide,
    hand_length_mm: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(HandPose, HandPose)> {
    let w = geometry.rgb_w as f64;
    let h = geometry.rgb_h as f64;
    let px_per_mm = w / SCENE_WIDTH_MM;
    let (left_dir, right_dir) = match side {
        HandSide::Dorsal => (1.0, -1.0),
        HandSide::Palmar => (-1.0, 1.0),
    };
    for _ in 0..100 {
        let left = HandPose {
            length_mm: hand_length_mm,
            px_per_mm,
            wrist_x: 0.26 * w + rng.random_range(-3.0..3.0),
            wrist_y: 0.88 * h + rng.random_range(-3.0..3.0),
            angle_rad: rng.random_range(-0.08..0.08),
            thumb_dir: left_dir,
        };
        let right = HandPose {
            length_mm: hand_length_mm,
            px_per_mm,
            wrist_x: 0.74 * w + rng.random_range(-3.0..3.0),
            wrist_y: 0.88 * h + rng.random_range(-3.0..3.0),
            angle_rad: rng.random_range(-0.08..0.08),
            thumb_dir: right_dir,
        };
        let (lx0, lx1, ly0, _) = left.bounds_px();
        let (rx0, rx1, ry0, _) = right.bounds_px();
        let in_frame = lx0 >= 2.0 && rx0 >= 2.0 && lx1 <= w - 3.0 && rx1 <= w - 3.0
            && ly0 >= 2.0 && ry0 >= 2.0;
        if in_frame && lx1 < rx0 - 1.0 {
            return Ok((left, right));
        }
    }
    Err(Error::Domain(format!(
        "could not place two {hand_length_mm} mm hands in a {w}x{h} frame"
    )))
}

fn paint_two_tone(w: usize, h: usize, mask: &BinaryMask, fg: [f32; 3], bg: [f32; 3]) -> Vec<f32> {
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            data.extend_from_slice(if mask.get(x, y) { &fg } else { &bg });
        }
    }
    data
}

fn paint_uv(w: usize, h: usize, sil: &BinaryMask, covered: &BinaryMask) -> Vec<f32> {
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let c = if covered.get(x, y) {
                &FLUOR_RGB
            } else if sil.get(x, y) {
                &UV_HAND_RGB
            } else {
                &UV_BG_RGB
            };
            data.extend_from_slice(c);
        }
    }
    data
}

/// Paints a few dim speckle disks onto the UV shot, never over the dye.
/// The first two disks are steered onto uncovered skin so the brightness
/// gate of the extraction is genuinely exercised.
fn paint_speckles(
    data: &mut [f32],
    w: usize,
    h: usize,
    roi: &BinaryMask,
    covered: &BinaryMask,
    rng: &mut ChaCha8Rng,
) {
    let n = rng.random_range(4..=6usize);
    for i in 0..n {
        let mut cx = rng.random_range(0..w);
        let mut cy = rng.random_range(0..h);
        if i < 2 {
            for _ in 0..500 {
                if roi.get(cx, cy) && !covered.get(cx, cy) {
                    break;
                }
                cx = rng.random_range(0..w);
                cy = rng.random_range(0..h);
            }
        }
        let r = rng.random_range(1.5..4.0f64);
        let xa = (cx as f64 - r).floor().max(0.0) as usize;
        let xb = ((cx as f64 + r).ceil() as usize + 1).min(w);
        let ya = (cy as f64 - r).floor().max(0.0) as usize;
        let yb = ((cy as f64 + r).ceil() as usize + 1).min(h);
        for y in ya..yb {
            for x in xa..xb {
                let dx = x as f64 - cx as f64;
                let dy = y as f64 - cy as f64;
                if dx * dx + dy * dy <= r * r && !covered.get(x, y) {
                    data[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&SPECKLE_RGB);
                }
            }
        }
    }
}

fn add_noise_clamped(data: &mut [f32], sd: f64, lo: f32, hi: f32, rng: &mut ChaCha8Rng) -> Result<()> {
    if sd == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0f64, sd)
        .map_err(|e| Error::Domain(format!("invalid noise deviation {sd}: {e}")))?;
    for v in data.iter_mut() {
        *v = (*v + normal.sample(rng) as f32).clamp(lo, hi);
    }
    Ok(())
}

fn mask_plane(mask: &BinaryMask) -> Result<ImagePlane> {
    let mut data = Vec::with_capacity(mask.width * mask.height);
    for y in 0..mask.height {
        for x in 0..mask.width {
            data.push(if mask.get(x, y) { 1.0 } else { 0.0 });
        }
    }
    ImagePlane::new(mask.width, mask.height, 1, Role::Gray, data)
}

/// Resamples the RGB-space skin and rub masks into per-thermal-pixel
/// occupancy fractions: each thermal pixel takes the mean of 3×3
/// subsamples pushed through undistortion and the registration.
fn project_fields(
    geometry: &SceneGeometry,
    sil: &BinaryMask,
    covered: &BinaryMask,
) -> Result<(ImagePlane, ImagePlane)> {
    let sil_plane = mask_plane(sil)?;
    let cov_plane = mask_plane(covered)?;
    let (tw, th) = (geometry.thermal_w, geometry.thermal_h);
    let mut sf = vec![0.0f32; tw * th];
    let mut cf = vec![0.0f32; tw * th];
    const OFF: [f64; 3] = [-1.0 / 3.0, 0.0, 1.0 / 3.0];
    for v in 0..th {
        for u in 0..tw {
            let mut ssum = 0.0f64;
            let mut csum = 0.0f64;
            for dv in OFF {
                for du in OFF {
                    let (ux, uy) = undistort_point(&geometry.camera, u as f64 + du, v as f64 + dv)?;
                    let (rx, ry) = geometry.thermal_to_rgb.apply(ux, uy);
                    ssum += sample_bilinear(&sil_plane, rx, ry, 0).unwrap_or(0.0) as f64;
                    csum += sample_bilinear(&cov_plane, rx, ry, 0).unwrap_or(0.0) as f64;
                }
            }
            sf[v * tw + u] = (ssum / 9.0) as f32;
            cf[v * tw + u] = (csum / 9.0) as f32;
        }
    }
    Ok((
        ImagePlane::new(tw, th, 1, Role::Gray, sf)?,
        ImagePlane::new(tw, th, 1, Role::Gray, cf)?,
    ))
}

/// One thermal frame: ambient plus skin warmth, minus the rewarming
/// cooling footprint when an observation time is given.
fn thermal_frame(
    sil_frac: &ImagePlane,
    cooled: Option<(&ImagePlane, u32)>,
    params: &ThermalParams,
    rng: &mut ChaCha8Rng,
) -> Result<ImagePlane> {
    let n = sil_frac.width * sil_frac.height;
    let mut data = vec![0.0f32; n];
    let warmth = params.skin_temp_c - params.ambient_temp_c;
    let drop = cooled
        .map(|(_, t)| params.delta_cool_c * (-(t as f64) / params.tau_rewarm_s).exp())
        .unwrap_or(0.0);
    for (i, out) in data.iter_mut().enumerate() {
        let mut t_c = params.ambient_temp_c + warmth * sil_frac.data[i] as f64;
        if let Some((cov, _)) = cooled {
            t_c -= drop * cov.data[i] as f64;
        }
        *out = t_c as f32;
    }
    add_noise_clamped(&mut data, params.noise_sd_c, 0.0, 60.0, rng)?;
    for v in data.iter_mut() {
        *v = v.clamp(0.0, 60.0);
    }
    ImagePlane::new(sil_frac.width, sil_frac.height, 1, Role::Thermal, data)
}

/// Separable Gaussian blur with clamp-to-edge padding; σ = 0 is the
/// identity.
pub fn gaussian_blur(img: &ImagePlane, sigma: f64) -> Result<ImagePlane> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::Domain(format!("blur sigma must be finite and non-negative, got {sigma}")));
    }
    if sigma < 1e-9 {
        return Ok(img.clone());
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let total: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= total;
    }
    let (w, h, ch) = (img.width, img.height, img.channels);
    let mut tmp = vec![0.0f32; w * h * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0f64;
                for (j, k) in kernel.iter().enumerate() {
                    let sx = (x as isize + j as isize - radius).clamp(0, w as isize - 1) as usize;
                    acc += k * img.data[(y * w + sx) * ch + c] as f64;
                }
                tmp[(y * w + x) * ch + c] = acc as f32;
            }
        }
    }
    let mut out = vec![0.0f32; w * h * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0f64;
                for (j, k) in kernel.iter().enumerate() {
                    let sy = (y as isize + j as isize - radius).clamp(0, h as isize - 1) as usize;
                    acc += k * tmp[(sy * w + x) * ch + c] as f64;
                }
                out[(y * w + x) * ch + c] = acc as f32;
            }
        }
    }
    ImagePlane::new(w, h, ch, img.role, out)
}

/// Renders one complete bundle for a task. Everything random — hand
/// placement, pattern draws, speckles and sensor noise — derives from
/// `seed` alone, given the same geometry and parameters.
pub fn render_scene(
    task: u8,
    participant: u32,
    hand_length_mm: f64,
    geometry: &SceneGeometry,
    thermal: &ThermalParams,
    options: &RenderOptions,
    seed: u64,
) -> Result<SceneBundle> {
    geometry.validate()?;
    thermal.validate()?;
    if !(120.0..=260.0).contains(&hand_length_mm) {
        return Err(Error::Domain(format!("implausible hand length {hand_length_mm} mm")));
    }
    if options.rgb_noise_sd < 0.0 {
        return Err(Error::Domain("RGB noise deviation must be non-negative".into()));
    }
    let spec = task_spec(task)?;
    let (w, h) = (geometry.rgb_w, geometry.rgb_h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (left, right) = place_hands(geometry, spec.side, hand_length_mm, &mut rng)?;
    let (la, lb) = left.wrist_span();
    let (ra, rb) = right.wrist_span();
    let wrists = WristLine::new(vec![WristSpan { a: la, b: lb }, WristSpan { a: ra, b: rb }])?;

    let sil = left
        .rasterize(w, h, HandPose::in_silhouette)
        .or(&right.rasterize(w, h, HandPose::in_silhouette))?;
    let roi = left
        .rasterize(w, h, HandPose::in_hand_roi)
        .or(&right.rasterize(w, h, HandPose::in_hand_roi))?;
    let covered = coverage_pattern(task, &left, Chirality::Left, w, h, seed)?
        .or(&coverage_pattern(task, &right, Chirality::Right, w, h, seed)?)?;

    let mut white_data = paint_two_tone(w, h, &sil, SKIN_RGB, BG_RGB);
    let mut uv_data = paint_uv(w, h, &sil, &covered);
    if options.speckle {
        paint_speckles(&mut uv_data, w, h, &roi, &covered, &mut rng);
    }
    add_noise_clamped(&mut white_data, options.rgb_noise_sd, 0.0, 255.0, &mut rng)?;
    add_noise_clamped(&mut uv_data, options.rgb_noise_sd, 0.0, 255.0, &mut rng)?;
    let rgb_white = ImagePlane::new(w, h, 3, Role::Rgb, white_data)?;
    let uv = ImagePlane::new(w, h, 3, Role::Rgb, uv_data)?;

    let (sil_frac, cov_frac) = project_fields(geometry, &sil, &covered)?;
    let thermal_baseline = thermal_frame(&sil_frac, None, thermal, &mut rng)?;
    let mut thermal_obs = Vec::with_capacity(TIME_OFFSETS_S.len());
    for &t in TIME_OFFSETS_S.iter() {
        let cov_t = gaussian_blur(&cov_frac, thermal.diffusion_px_per_s * t as f64)?;
        thermal_obs.push(thermal_frame(&sil_frac, Some((&cov_t, t)), thermal, &mut rng)?);
    }

    let truth = GroundTruthMasks::new(roi, covered)?;
    Ok(SceneBundle {
        meta: BundleMeta { participant, task, hand_side: spec.side, hand_length_mm, seed },
        geometry: geometry.clone(),
        rgb_white,
        uv,
        thermal_baseline,
        thermal_obs,
        sil_frac,
        cov_frac,
        truth,
        wrists,
    })
}

pub use crate::seed::splitmix64;

/// Per-bundle seed: distinct per (participant, task) pair under one
/// master seed. Task 0 is reserved for the participant's own plan draws.
pub fn bundle_seed(master_seed: u64, participant: u32, task: u8) -> u64 {
    splitmix64(master_seed ^ splitmix64(((participant as u64) << 8) | task as u64))
}

const GEOMETRY_SALT: u64 = 0x7269_675f_6765_6f6d;

/// Tasks every participant performs; the remaining nine single-step
/// tasks alternate by participant parity between the dorsal block (5–13)
/// and the palmar block (20–28).
pub const COMMON_TASKS: [u8; 12] = [1, 2, 3, 4, 14, 15, 16, 17, 18, 19, 29, 30];

/// Everything needed to generate one dataset deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_participants: u32,
    pub master_seed: u64,
    pub rgb_w: usize,
    pub rgb_h: usize,
    pub thermal_w: usize,
    pub thermal_h: usize,
    /// Hand-held board views rendered for intrinsic calibration.
    pub intrinsic_views: usize,
    pub thermal: ThermalParams,
    pub options: RenderOptions,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_participants: 30,
            master_seed: 7,
            rgb_w: 384,
            rgb_h: 288,
            thermal_w: 128,
            thermal_h: 96,
            intrinsic_views: 10,
            thermal: ThermalParams::default(),
            options: RenderOptions::default(),
        }
    }
}

/// One participant's drawn hand length and task list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantParams {
    pub participant: u32,
    pub hand_length_mm: f64,
    pub tasks: Vec<u8>,
}

/// The sampled rig and per-participant parameters of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPlan {
    pub geometry: SceneGeometry,
    pub participants: Vec<ParticipantParams>,
}

impl DatasetPlan {
    /// Total number of bundles the plan will produce.
    pub fn bundle_count(&self) -> usize {
        self.participants.iter().map(|p| p.tasks.len()).sum()
    }
}

/// Draws the rig and every participant's hand length and task list from
/// the master seed, without rendering anything.
pub fn dataset_plan(cfg: &DatasetConfig) -> Result<DatasetPlan> {
    if cfg.n_participants < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 participants, got {}",
            cfg.n_participants
        )));
    }
    let geometry = SceneGeometry::sample_seeded(
        cfg.rgb_w,
        cfg.rgb_h,
        cfg.thermal_w,
        cfg.thermal_h,
        splitmix64(cfg.master_seed ^ GEOMETRY_SALT),
    )?;
    let mut participants = Vec::with_capacity(cfg.n_participants as usize);
    for p in 1..=cfg.n_participants {
        let mut rng = ChaCha8Rng::seed_from_u64(bundle_seed(cfg.master_seed, p, 0));
        let hand_length_mm = rng.random_range(160.0..204.0);
        let mut tasks = COMMON_TASKS.to_vec();
        tasks.extend(if p % 2 == 1 { 5..=13u8 } else { 20..=28u8 });
        tasks.sort_unstable();
        participants.push(ParticipantParams { participant: p, hand_length_mm, tasks });
    }
    Ok(DatasetPlan { geometry, participants })
}

/// Renders one bundle of a planned dataset.
pub fn render_bundle(
    cfg: &DatasetConfig,
    geometry: &SceneGeometry,
    participant: &ParticipantParams,
    task: u8,
) -> Result<SceneBundle> {
    let seed = bundle_seed(cfg.master_seed, participant.participant, task);
    render_scene(
        task,
        participant.participant,
        participant.hand_length_mm,
        geometry,
        &cfg.thermal,
        &cfg.options,
        seed,
    )
}

/// Renders the whole dataset into memory; intended for small runs. Large
/// runs should iterate the plan and persist bundles one at a time.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<SceneBundle>> {
    let plan = dataset_plan(cfg)?;
    let mut bundles = Vec::with_capacity(plan.bundle_count());
    for part in &plan.participants {
        for &task in &part.tasks {
            bundles.push(render_bundle(cfg, &plan.geometry, part, task)?);
        }
    }
    Ok(bundles)
}
