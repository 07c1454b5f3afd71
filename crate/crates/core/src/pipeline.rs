//! End-to-end experiment orchestration: `simulate → calibrate →
//! extract-gt → train → eval → report`, checkpointed on disk.
//!
//! Every stage is a pure function of the [`PipelineConfig`] and the files
//! earlier stages wrote, so an interrupted run resumes where it stopped:
//! [`run_all`] skips any stage whose checkpoint carries the current
//! configuration hash. All randomness derives from the master seed, so two
//! runs with the same configuration produce byte-identical metric tables.
//!
//! Failures of individual recordings (a bundle that fails to render, a
//! ground-truth extraction that finds no hand) are collected per stage in
//! [`StageReport::failures`] and the remaining work continues; only errors
//! that invalidate the whole run (an unreadable dataset, a calibration
//! with too few usable views) abort it.
//!
//! On-disk layout, relative to the two configured roots:
//!
//! ```text
//! dataset_dir/
//!   plan.json                  sampled rig and participant parameters
//!   manifest.json              catalog of successfully rendered bundles
//!   boards/intrinsic_NN.f32    thermal views of the calibration board
//!   boards/registration_*.f32  simultaneous two-camera board views
//!   bundles/pPP_tTT/           one recording: studio shots, thermal
//!                              frames, painted truth, annotations
//! output_dir/
//!   checkpoints/STAGE.json     stage markers carrying the config hash
//!   geometry/camera.json       estimated thermal intrinsics
//!   geometry/homography.json   estimated thermal→RGB mapping
//!   models/TARGET_foldF.weights  trained parameters (+ manifest sidecar)
//!   reports/                   metric tables, plots and test results
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{
    detect_chessboard_corners, estimate_intrinsics, register_thermal_to_rgb, undistort_point,
    BoardSpec, CameraModel, CornerGrid, Homography3,
};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, aggregate_by, confusion, dice_eps, kfold_split, pixel_accuracy, temporal_curve,
    FoldSplit, HandSizeBucket, MetricsRecord, TemporalCurve, DICE_EPS, TIME_OFFSETS_S,
};
use crate::groundtruth::{build_ground_truth, ThresholdConfig, WristLine};
use crate::imaging::{resize_bilinear, BinaryMask, ImagePlane, Role};
use crate::io;
use crate::net::{
    make_task2_input, predict_mask, train_folds, EpochRow, FoldAssignment, Tensor, TrainConfig,
    TrainSample, UNet, UNetConfig,
};
use crate::seed::splitmix64;
use crate::stats::{spearman, welch_anova, TestResult};
use crate::synth::{
    dataset_plan, render_bundle, render_chessboard_views, render_registration_views, BundleMeta,
    DatasetConfig, DatasetPlan, ParticipantParams,
};

/// Stage names in execution order.
pub const STAGES: [&str; 6] = ["simulate", "calibrate", "extract-gt", "train", "eval", "report"];

const BOARD_SALT: u64 = 0x6361_6c69_625f_7631;
const REGISTRATION_SALT: u64 = 0x7265_6769_7374_7231;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Everything a full run needs. Serialized as JSON for the command line;
/// missing fields fall back to the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Root the simulate stage writes the synthetic recordings under.
    pub dataset_dir: PathBuf,
    /// Root for geometry, models, reports and checkpoints.
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub thresholds: ThresholdConfig,
    pub net: UNetConfig,
    pub train: TrainConfig,
    /// Participant-level cross-validation folds.
    pub folds: usize,
    /// Network input raster; both sides must be divisible by
    /// `2^net.levels` so the pooling pyramid closes.
    pub input_w: usize,
    pub input_h: usize,
    /// Observation delay (seconds) used for the training snapshots and
    /// the headline rows of the report.
    pub train_offset_s: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset_dir: PathBuf::from("data/dataset"),
            output_dir: PathBuf::from("data/output"),
            dataset: DatasetConfig::default(),
            thresholds: ThresholdConfig::default(),
            net: UNetConfig::default(),
            train: TrainConfig::default(),
            folds: 5,
            input_w: 96,
            input_h: 64,
            train_offset_s: 10,
        }
    }
}

impl PipelineConfig {
    /// Reads and validates a configuration file.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = io::load_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        if self.folds < 2 || self.folds > self.dataset.n_participants as usize {
            return Err(Error::Domain(format!(
                "folds must lie in [2, n_participants]; got {} folds for {} participants",
                self.folds, self.dataset.n_participants
            )));
        }
        let stride = 1usize << self.net.levels;
        if self.input_w == 0
            || self.input_h == 0
            || self.input_w % stride != 0
            || self.input_h % stride != 0
        {
            return Err(Error::Domain(format!(
                "input raster {}x{} must be a positive multiple of {stride} on both sides",
                self.input_w, self.input_h
            )));
        }
        if self.net.in_channels != 3 || self.net.out_classes != 2 {
            return Err(Error::Domain(format!(
                "the pipeline feeds 3-channel inputs to 2-class heads; got {} channels, {} classes",
                self.net.in_channels, self.net.out_classes
            )));
        }
        if !TIME_OFFSETS_S.contains(&self.train_offset_s) {
            return Err(Error::Domain(format!(
                "train_offset_s {} is not one of the recorded delays {:?}",
                self.train_offset_s, TIME_OFFSETS_S
            )));
        }
        Ok(())
    }

    /// Hash that stamps every artifact and gates the stage checkpoints.
    pub fn sha256(&self) -> Result<String> {
        io::json_sha256(self)
    }

    // --- dataset-side paths ---

    pub fn plan_path(&self) -> PathBuf {
        self.dataset_dir.join("plan.json")
    }

    pub fn dataset_manifest_path(&self) -> PathBuf {
        self.dataset_dir.join("manifest.json")
    }

    pub fn board_view_path(&self, index: usize) -> PathBuf {
        self.dataset_dir.join("boards").join(format!("intrinsic_{index:02}.f32"))
    }

    pub fn registration_thermal_path(&self) -> PathBuf {
        self.dataset_dir.join("boards").join("registration_thermal.f32")
    }

    pub fn registration_rgb_path(&self) -> PathBuf {
        self.dataset_dir.join("boards").join("registration_rgb.f32")
    }

    pub fn registration_board_path(&self) -> PathBuf {
        self.dataset_dir.join("boards").join("registration.json")
    }

    pub fn bundle_dir(&self, participant: u32, task: u8) -> PathBuf {
        self.dataset_dir.join("bundles").join(format!("p{participant:02}_t{task:02}"))
    }

    // --- output-side paths ---

    pub fn checkpoint_path(&self, stage: &str) -> PathBuf {
        self.output_dir.join("checkpoints").join(format!("{stage}.json"))
    }

    pub fn camera_path(&self) -> PathBuf {
        self.output_dir.join("geometry").join("camera.json")
    }

    pub fn homography_path(&self) -> PathBuf {
        self.output_dir.join("geometry").join("homography.json")
    }

    pub fn model_path(&self, target: SegTarget, fold: u8) -> PathBuf {
        self.output_dir.join("models").join(format!("{}_fold{fold}.weights", target.label()))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.output_dir.join("reports")
    }

    pub fn curves_path(&self, target: SegTarget) -> PathBuf {
        self.reports_dir().join(format!("curves_{}.csv", target.label()))
    }

    pub fn calibration_report_path(&self) -> PathBuf {
        self.reports_dir().join("calibration.json")
    }

    /// The coverage metric table: one row per bundle and delay.
    pub fn metrics_path(&self) -> PathBuf {
        self.reports_dir().join("metrics.csv")
    }

    /// The hand-segmentation metric table: one row per bundle.
    pub fn hand_metrics_path(&self) -> PathBuf {
        self.reports_dir().join("metrics_hand.csv")
    }

    pub fn temporal_csv_path(&self) -> PathBuf {
        self.reports_dir().join("temporal_curve.csv")
    }

    pub fn temporal_svg_path(&self) -> PathBuf {
        self.reports_dir().join("temporal_curve.svg")
    }

    pub fn scatter_svg_path(&self) -> PathBuf {
        self.reports_dir().join("coverage_vs_dice.svg")
    }

    pub fn analysis_path(&self) -> PathBuf {
        self.reports_dir().join("analysis.json")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.reports_dir().join("summary.json")
    }
}

/// Which segmentation network an artifact belongs to: the hand locator
/// fed by the white-light photo, or the coverage net fed by thermal
/// differences inside the located hand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegTarget {
    Hand,
    Coverage,
}

impl SegTarget {
    pub fn label(self) -> &'static str {
        match self {
            SegTarget::Hand => "hand",
            SegTarget::Coverage => "coverage",
        }
    }

    /// Per-target weight-init seed, so the two nets never share draws.
    fn net_config(self, cfg: &PipelineConfig) -> UNetConfig {
        let salt = match self {
            SegTarget::Hand => 1u64,
            SegTarget::Coverage => 2u64,
        };
        UNetConfig { seed: splitmix64(cfg.net.seed ^ salt), ..cfg.net }
    }
}

// ---------------------------------------------------------------------------
// Artifact envelopes
// ---------------------------------------------------------------------------

/// `plan.json`: the sampled rig and participant draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanFile {
    pub seed: u64,
    pub config_sha256: String,
    pub plan: DatasetPlan,
}

/// `manifest.json`: which bundles the simulate stage produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config_sha256: String,
    pub bundles: Vec<BundleMeta>,
    pub failures: Vec<String>,
}

/// Per-bundle `meta.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleFileMeta {
    pub master_seed: u64,
    pub config_sha256: String,
    #[serde(flatten)]
    pub meta: BundleMeta,
}

/// `geometry/camera.json`: the estimated thermal intrinsics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraFile {
    pub seed: u64,
    pub config_sha256: String,
    pub camera: CameraModel,
    /// Reprojection RMS over all corners of all usable views, pixels.
    pub rms_px: f64,
    pub views_used: usize,
}

/// `geometry/homography.json`: the estimated thermal→RGB mapping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HomographyFile {
    pub seed: u64,
    pub config_sha256: String,
    pub homography: Homography3,
    /// Corner transfer RMS in RGB pixels.
    pub transfer_rms_px: f64,
}

/// Sidecar stamped next to each metric CSV, since the pinned CSV headers
/// leave no room for provenance columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableSidecar {
    pub seed: u64,
    pub config_sha256: String,
    pub rows: usize,
}

/// `reports/analysis.json`: the statistical readout of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisFile {
    pub seed: u64,
    pub config_sha256: String,
    /// Delay the headline numbers are taken at.
    pub headline_time_offset_s: u32,
    pub headline_mean_accuracy: f64,
    pub headline_mean_dice: f64,
    pub temporal: TemporalCurve,
    /// Rank correlation of per-task mean coverage against per-task mean
    /// Dice at the headline delay; absent if too few tasks.
    pub dice_vs_coverage: Option<TestResult>,
    /// Heteroscedastic one-way test of per-participant accuracy across
    /// hand-size groups; absent if the groups are too small.
    pub accuracy_by_hand_size: Option<TestResult>,
}

// ---------------------------------------------------------------------------
// Stage bookkeeping
// ---------------------------------------------------------------------------

/// What one stage did: progress notes plus per-recording failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    /// True when a matching checkpoint made the stage a no-op.
    pub skipped: bool,
    pub messages: Vec<String>,
    /// Labels of recordings that failed but did not abort the stage.
    pub failures: Vec<String>,
}

impl StageReport {
    fn new(stage: &str) -> Self {
        Self { stage: stage.to_string(), skipped: false, messages: Vec::new(), failures: Vec::new() }
    }

    fn msg(&mut self, m: String) {
        self.messages.push(m);
    }
}

/// The full run: written to `reports/summary.json` by [`run_all`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config_sha256: String,
    pub stages: Vec<StageReport>,
}

impl RunReport {
    /// True when every stage ran but some recordings were dropped.
    pub fn partial(&self) -> bool {
        self.stages.iter().any(|s| !s.failures.is_empty())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    stage: String,
    seed: u64,
    config_sha256: String,
}

/// True when `stage` already ran under the exact current configuration.
pub fn stage_is_complete(cfg: &PipelineConfig, stage: &str) -> bool {
    let Ok(mark) = io::load_json::<Checkpoint>(&cfg.checkpoint_path(stage)) else {
        return false;
    };
    matches!(cfg.sha256(), Ok(h) if h == mark.config_sha256 && mark.stage == stage)
}

fn write_checkpoint(cfg: &PipelineConfig, stage: &str) -> Result<()> {
    let mark = Checkpoint {
        stage: stage.to_string(),
        seed: cfg.dataset.master_seed,
        config_sha256: cfg.sha256()?,
    };
    io::save_json(&cfg.checkpoint_path(stage), &mark)
}

/// Maps user-facing stage spellings onto [`STAGES`] entries.
pub fn canonical_stage(name: &str) -> Result<&'static str> {
    match name {
        "simulate" => Ok("simulate"),
        "calibrate" => Ok("calibrate"),
        "extract-gt" | "groundtruth" => Ok("extract-gt"),
        "train" => Ok("train"),
        "eval" => Ok("eval"),
        "report" => Ok("report"),
        other => Err(Error::Domain(format!(
            "unknown stage '{other}'; expected one of {}",
            STAGES.join(", ")
        ))),
    }
}

/// Runs a single stage unconditionally and marks its checkpoint.
pub fn run_stage(cfg: &PipelineConfig, stage: &str) -> Result<StageReport> {
    cfg.validate()?;
    let stage = canonical_stage(stage)?;
    let report = match stage {
        "simulate" => stage_simulate(cfg)?,
        "calibrate" => stage_calibrate(cfg)?,
        "extract-gt" => stage_extract_gt(cfg)?,
        "train" => stage_train(cfg)?,
        "eval" => stage_eval(cfg)?,
        "report" => stage_report(cfg)?,
        _ => unreachable!("canonical_stage returns only known names"),
    };
    write_checkpoint(cfg, stage)?;
    Ok(report)
}

/// Runs every stage in order, skipping those whose checkpoint matches the
/// current configuration, and writes `reports/summary.json`.
pub fn run_all(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut run = RunReport {
        seed: cfg.dataset.master_seed,
        config_sha256: cfg.sha256()?,
        stages: Vec::new(),
    };
    for stage in STAGES {
        if stage_is_complete(cfg, stage) {
            let mut report = StageReport::new(stage);
            report.skipped = true;
            report.msg("checkpoint matches current configuration; skipped".to_string());
            run.stages.push(report);
            continue;
        }
        run.stages.push(run_stage(cfg, stage)?);
    }
    io::save_json(&cfg.summary_path(), &run)?;
    Ok(run)
}

fn bundle_label(meta: &BundleMeta) -> String {
    format!("p{:02}_t{:02}", meta.participant, meta.task)
}

fn obs_file_name(offset_s: u32) -> String {
    format!("thermal_obs_{offset_s:02}.f32")
}

// ---------------------------------------------------------------------------
// Stage: simulate
// ---------------------------------------------------------------------------

fn stage_simulate(cfg: &PipelineConfig) -> Result<StageReport> {
    let mut report = StageReport::new("simulate");
    let hash = cfg.sha256()?;
    let master = cfg.dataset.master_seed;

    let plan = dataset_plan(&cfg.dataset)?;
    io::save_json(
        &cfg.plan_path(),
        &PlanFile { seed: master, config_sha256: hash.clone(), plan: plan.clone() },
    )?;

    let views = render_chessboard_views(
        &plan.geometry.camera,
        cfg.dataset.intrinsic_views,
        splitmix64(master ^ BOARD_SALT),
        cfg.dataset.thermal_w,
        cfg.dataset.thermal_h,
    )?;
    for (i, view) in views.iter().enumerate() {
        io::save_plane_raw(&cfg.board_view_path(i), &view.image)?;
    }
    let registration =
        render_registration_views(&plan.geometry, splitmix64(master ^ REGISTRATION_SALT))?;
    io::save_plane_raw(&cfg.registration_thermal_path(), &registration.thermal)?;
    io::save_plane_raw(&cfg.registration_rgb_path(), &registration.rgb)?;
    io::save_json(&cfg.registration_board_path(), &registration.board)?;
    report.msg(format!(
        "rendered {} intrinsic board views and the registration pair",
        views.len()
    ));

    let jobs: Vec<(&ParticipantParams, u8)> = plan
        .participants
        .iter()
        .flat_map(|p| p.tasks.iter().map(move |&t| (p, t)))
        .collect();
    let results: Vec<std::result::Result<BundleMeta, String>> = jobs
        .par_iter()
        .map(|&(part, task)| {
            store_bundle(cfg, &plan.geometry, part, task, &hash)
                .map_err(|e| format!("p{:02}_t{task:02}: {e}", part.participant))
        })
        .collect();
    let mut bundles = Vec::with_capacity(jobs.len());
    for r in results {
        match r {
            Ok(meta) => bundles.push(meta),
            Err(failure) => report.failures.push(failure),
        }
    }
    report.msg(format!("rendered {}/{} bundles", bundles.len(), jobs.len()));
    io::save_json(
        &cfg.dataset_manifest_path(),
        &DatasetManifest {
            seed: master,
            config_sha256: hash,
            bundles,
            failures: report.failures.clone(),
        },
    )?;
    Ok(report)
}

fn store_bundle(
    cfg: &PipelineConfig,
    geometry: &crate::synth::SceneGeometry,
    part: &ParticipantParams,
    task: u8,
    hash: &str,
) -> Result<BundleMeta> {
    let bundle = render_bundle(&cfg.dataset, geometry, part, task)?;
    if bundle.thermal_obs.len() != TIME_OFFSETS_S.len() {
        return Err(Error::DimensionMismatch(format!(
            "bundle carries {} thermal observations, expected {}",
            bundle.thermal_obs.len(),
            TIME_OFFSETS_S.len()
        )));
    }
    let dir = cfg.bundle_dir(part.participant, task);
    io::save_image_png(&dir.join("rgb_white.png"), &bundle.rgb_white)?;
    io::save_image_png(&dir.join("uv.png"), &bundle.uv)?;
    io::save_plane_raw(&dir.join("thermal_baseline.f32"), &bundle.thermal_baseline)?;
    for (i, &t) in TIME_OFFSETS_S.iter().enumerate() {
        io::save_plane_raw(&dir.join(obs_file_name(t)), &bundle.thermal_obs[i])?;
    }
    io::save_mask_png(&dir.join("truth_hand_roi.png"), &bundle.truth.hand_roi)?;
    io::save_mask_png(&dir.join("truth_covered.png"), &bundle.truth.covered)?;
    io::save_json(&dir.join("wrists.json"), &bundle.wrists)?;
    io::save_json(
        &dir.join("meta.json"),
        &BundleFileMeta {
            master_seed: cfg.dataset.master_seed,
            config_sha256: hash.to_string(),
            meta: bundle.meta,
        },
    )?;
    Ok(bundle.meta)
}

// ---------------------------------------------------------------------------
// Stage: calibrate
// ---------------------------------------------------------------------------

fn stage_calibrate(cfg: &PipelineConfig) -> Result<StageReport> {
    let mut report = StageReport::new("calibrate");
    let hash = cfg.sha256()?;
    let board = BoardSpec::default();

    let detections: Vec<std::result::Result<CornerGrid, String>> = (0..cfg
        .dataset
        .intrinsic_views)
        .into_par_iter()
        .map(|i| {
            let image = io::load_plane_raw(&cfg.board_view_path(i))
                .and_then(|img| detect_chessboard_corners(&img, board.corner_rows(), board.corner_cols()));
            image.map_err(|e| format!("intrinsic view {i}: {e}"))
        })
        .collect();
    let mut grids = Vec::with_capacity(cfg.dataset.intrinsic_views);
    for d in detections {
        match d {
            Ok(grid) => grids.push(grid),
            Err(note) => report.msg(format!("dropped {note}")),
        }
    }
    let calib = estimate_intrinsics(&grids, &board)?;
    report.msg(format!(
        "intrinsics: reprojection rms {:.4} px over {} views",
        calib.rms_px,
        grids.len()
    ));

    let reg_board: BoardSpec = io::load_json(&cfg.registration_board_path())?;
    let thermal = io::load_plane_raw(&cfg.registration_thermal_path())?;
    let rgb = io::load_plane_raw(&cfg.registration_rgb_path())?;
    let registration = register_thermal_to_rgb(
        &thermal,
        &rgb,
        &calib.camera,
        reg_board.corner_rows(),
        reg_board.corner_cols(),
    )?;
    report.msg(format!("registration: corner transfer rms {:.4} px", registration.rms_px));

    io::save_json(
        &cfg.camera_path(),
        &CameraFile {
            seed: cfg.dataset.master_seed,
            config_sha256: hash.clone(),
            camera: calib.camera,
            rms_px: calib.rms_px,
            views_used: grids.len(),
        },
    )?;
    io::save_json(
        &cfg.homography_path(),
        &HomographyFile {
            seed: cfg.dataset.master_seed,
            config_sha256: hash.clone(),
            homography: registration.homography.clone(),
            transfer_rms_px: registration.rms_px,
        },
    )?;
    io::save_json(
        &cfg.calibration_report_path(),
        &serde_json::json!({
            "seed": cfg.dataset.master_seed,
            "config_sha256": hash,
            "intrinsic_rms_px": calib.rms_px,
            "intrinsic_rms_init_px": calib.rms_init_px,
            "views_used": grids.len(),
            "registration_rms_px": registration.rms_px,
        }),
    )?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Stage: extract-gt
// ---------------------------------------------------------------------------

fn stage_extract_gt(cfg: &PipelineConfig) -> Result<StageReport> {
    let mut report = StageReport::new("extract-gt");
    let manifest: DatasetManifest = io::load_json(&cfg.dataset_manifest_path())?;
    let failures: Vec<Option<String>> = manifest
        .bundles
        .par_iter()
        .map(|meta| {
            extract_bundle_gt(cfg, meta).err().map(|e| format!("{}: {e}", bundle_label(meta)))
        })
        .collect();
    let mut extracted = 0usize;
    for f in failures {
        match f {
            None => extracted += 1,
            Some(failure) => report.failures.push(failure),
        }
    }
    report.msg(format!("extracted ground truth for {extracted}/{} bundles", manifest.bundles.len()));
    Ok(report)
}

fn extract_bundle_gt(cfg: &PipelineConfig, meta: &BundleMeta) -> Result<()> {
    let dir = cfg.bundle_dir(meta.participant, meta.task);
    let rgb = io::load_image_png(&dir.join("rgb_white.png"), Role::Rgb)?;
    let uv = io::load_image_png(&dir.join("uv.png"), Role::Rgb)?;
    let wrists: WristLine = io::load_json(&dir.join("wrists.json"))?;
    let gt = build_ground_truth(&rgb, &uv, &wrists, &cfg.thresholds)?;
    io::save_mask_png(&dir.join("gt_hand_roi.png"), &gt.hand_roi)?;
    io::save_mask_png(&dir.join("gt_covered.png"), &gt.covered)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared sample preparation
// ---------------------------------------------------------------------------

/// The calibrated rig as later stages see it: estimated, never the
/// generator's true geometry.
struct Rig {
    camera: CameraModel,
    homography: Homography3,
}

fn load_rig(cfg: &PipelineConfig) -> Result<Rig> {
    let cam: CameraFile = io::load_json(&cfg.camera_path())?;
    let hom: HomographyFile = io::load_json(&cfg.homography_path())?;
    Ok(Rig { camera: cam.camera, homography: hom.homography })
}

fn load_plan(cfg: &PipelineConfig) -> Result<PlanFile> {
    io::load_json(&cfg.plan_path())
}

fn mask_to_plane(mask: &BinaryMask) -> ImagePlane {
    let mut data = Vec::with_capacity(mask.width * mask.height);
    for y in 0..mask.height {
        for x in 0..mask.width {
            data.push(if mask.get(x, y) { 1.0 } else { 0.0 });
        }
    }
    ImagePlane::new(mask.width, mask.height, 1, Role::Gray, data)
        .expect("mask dimensions form a valid image")
}

/// Downsamples a mask by area-averaging its indicator plane.
fn resize_mask(mask: &BinaryMask, w: usize, h: usize) -> Result<BinaryMask> {
    let plane = resize_bilinear(&mask_to_plane(mask), w, h)?;
    let mut out = BinaryMask::new_false(w, h);
    for y in 0..h {
        for x in 0..w {
            if plane.get(x, y, 0) >= 0.5 {
                out.set(x, y, true);
            }
        }
    }
    Ok(out)
}

fn sample_plane_bilinear(plane: &ImagePlane, x: f64, y: f64) -> f64 {
    let cx = x.clamp(0.0, (plane.width - 1) as f64);
    let cy = y.clamp(0.0, (plane.height - 1) as f64);
    let x0 = cx.floor() as usize;
    let y0 = cy.floor() as usize;
    let x1 = (x0 + 1).min(plane.width - 1);
    let y1 = (y0 + 1).min(plane.height - 1);
    let fx = cx - x0 as f64;
    let fy = cy - y0 as f64;
    let v00 = plane.get(x0, y0, 0) as f64;
    let v10 = plane.get(x1, y0, 0) as f64;
    let v01 = plane.get(x0, y1, 0) as f64;
    let v11 = plane.get(x1, y1, 0) as f64;
    v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy
}

/// Pulls an RGB-resolution mask back onto the network grid: each grid
/// cell is sampled 3×3, each subsample mapped through the (resampled)
/// thermal pixel grid, undistorted, pushed through the thermal→RGB
/// homography and read from the mask bilinearly; majority vote decides.
pub fn project_rgb_mask_to_grid(
    mask: &BinaryMask,
    cam: &CameraModel,
    thermal_to_rgb: &Homography3,
    thermal_w: usize,
    thermal_h: usize,
    grid_w: usize,
    grid_h: usize,
) -> Result<BinaryMask> {
    if grid_w == 0 || grid_h == 0 {
        return Err(Error::ZeroOutputDimension);
    }
    let plane = mask_to_plane(mask);
    let sx = thermal_w as f64 / grid_w as f64;
    let sy = thermal_h as f64 / grid_h as f64;
    const SUB: [f64; 3] = [-1.0 / 3.0, 0.0, 1.0 / 3.0];
    let mut out = BinaryMask::new_false(grid_w, grid_h);
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let mut acc = 0.0f64;
            for oy in SUB {
                for ox in SUB {
                    // Pixel-center mapping, the same convention as
                    // resize_bilinear uses for the thermal planes.
                    let tx = ((gx as f64 + 0.5 + ox) * sx - 0.5)
                        .clamp(0.0, thermal_w as f64 - 1.0);
                    let ty = ((gy as f64 + 0.5 + oy) * sy - 0.5)
                        .clamp(0.0, thermal_h as f64 - 1.0);
                    let (ux, uy) = undistort_point(cam, tx, ty)?;
                    let (rx, ry) = thermal_to_rgb.apply(ux, uy);
                    acc += sample_plane_bilinear(&plane, rx, ry);
                }
            }
            if acc / 9.0 >= 0.5 {
                out.set(gx, gy, true);
            }
        }
    }
    Ok(out)
}

/// Resizes the white-light photo to the network raster and standardizes
/// each channel to zero mean, unit variance over the whole frame.
fn standardized_rgb_input(rgb: &ImagePlane, w: usize, h: usize) -> Result<Tensor<f32>> {
    if rgb.channels != 3 {
        return Err(Error::DimensionMismatch(format!(
            "expected a 3-channel photo, got {} channels",
            rgb.channels
        )));
    }
    let img = resize_bilinear(rgb, w, h)?;
    let mut t = Tensor::<f32>::zeros([1, 3, h, w]);
    let n = (w * h) as f64;
    for c in 0..3 {
        let mut sum = 0.0f64;
        let mut sq = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                let v = img.get(x, y, c) as f64;
                sum += v;
                sq += v * v;
            }
        }
        let mean = sum / n;
        let sd = (sq / n - mean * mean).max(0.0).sqrt();
        let scale = if sd > 1e-9 { 1.0 / sd } else { 0.0 };
        for y in 0..h {
            for x in 0..w {
                t.data[(c * h + y) * w + x] = ((img.get(x, y, c) as f64 - mean) * scale) as f32;
            }
        }
    }
    Ok(t)
}

/// Extracted ground truth of one bundle on the network grid.
fn grid_truth(cfg: &PipelineConfig, rig: &Rig, dir: &Path) -> Result<(BinaryMask, BinaryMask)> {
    let hand_rgb = io::load_mask_png(&dir.join("gt_hand_roi.png"))?;
    let covered_rgb = io::load_mask_png(&dir.join("gt_covered.png"))?;
    let (tw, th) = (cfg.dataset.thermal_w, cfg.dataset.thermal_h);
    let hand = project_rgb_mask_to_grid(
        &hand_rgb,
        &rig.camera,
        &rig.homography,
        tw,
        th,
        cfg.input_w,
        cfg.input_h,
    )?;
    if hand.area() == 0 {
        return Err(Error::EmptyHandMask);
    }
    let covered = project_rgb_mask_to_grid(
        &covered_rgb,
        &rig.camera,
        &rig.homography,
        tw,
        th,
        cfg.input_w,
        cfg.input_h,
    )?
    .and(&hand)?;
    Ok((hand, covered))
}

fn build_hand_sample(cfg: &PipelineConfig, dir: &Path) -> Result<TrainSample> {
    let rgb = io::load_image_png(&dir.join("rgb_white.png"), Role::Rgb)?;
    let input = standardized_rgb_input(&rgb, cfg.input_w, cfg.input_h)?;
    let target = resize_mask(
        &io::load_mask_png(&dir.join("gt_hand_roi.png"))?,
        cfg.input_w,
        cfg.input_h,
    )?;
    Ok(TrainSample { input, target })
}

fn build_coverage_sample(
    cfg: &PipelineConfig,
    rig: &Rig,
    dir: &Path,
    offset_s: u32,
) -> Result<TrainSample> {
    let (hand, covered) = grid_truth(cfg, rig, dir)?;
    let baseline = resize_bilinear(
        &io::load_plane_raw(&dir.join("thermal_baseline.f32"))?,
        cfg.input_w,
        cfg.input_h,
    )?;
    let observation = resize_bilinear(
        &io::load_plane_raw(&dir.join(obs_file_name(offset_s)))?,
        cfg.input_w,
        cfg.input_h,
    )?;
    let input = make_task2_input(&baseline, &observation, &hand)?;
    Ok(TrainSample { input, target: covered })
}

// ---------------------------------------------------------------------------
// Stage: train
// ---------------------------------------------------------------------------

fn fold_assignments(split: &FoldSplit, folds: usize, owners: &[u32]) -> Vec<FoldAssignment> {
    (0..folds as u8)
        .map(|f| {
            let mut train = Vec::new();
            let mut val = Vec::new();
            for (i, &p) in owners.iter().enumerate() {
                if split.fold_of(p) == Some(f) {
                    val.push(i);
                } else {
                    train.push(i);
                }
            }
            FoldAssignment { fold: f, train, val }
        })
        .collect()
}

fn stage_train(cfg: &PipelineConfig) -> Result<StageReport> {
    let mut report = StageReport::new("train");
    let plan = load_plan(cfg)?;
    let manifest: DatasetManifest = io::load_json(&cfg.dataset_manifest_path())?;
    let ids: Vec<u32> = plan.plan.participants.iter().map(|p| p.participant).collect();
    let split = kfold_split(&ids, cfg.folds, cfg.dataset.master_seed)?;
    let rig = load_rig(cfg)?;

    for target in [SegTarget::Hand, SegTarget::Coverage] {
        let mut samples = Vec::with_capacity(manifest.bundles.len());
        let mut owners = Vec::with_capacity(manifest.bundles.len());
        for meta in &manifest.bundles {
            let dir = cfg.bundle_dir(meta.participant, meta.task);
            let built = match target {
                SegTarget::Hand => build_hand_sample(cfg, &dir),
                SegTarget::Coverage => {
                    build_coverage_sample(cfg, &rig, &dir, cfg.train_offset_s)
                }
            };
            match built {
                Ok(sample) => {
                    samples.push(sample);
                    owners.push(meta.participant);
                }
                Err(e) => {
                    report.failures.push(format!("{} {}: {e}", target.label(), bundle_label(meta)));
                }
            }
        }
        let folds = fold_assignments(&split, cfg.folds, &owners);
        let net_cfg = target.net_config(cfg);
        let models = train_folds(&samples, &folds, &cfg.train, &net_cfg)?;
        let mut curves: Vec<EpochRow> = Vec::new();
        for model in &models {
            io::save_weights(&cfg.model_path(target, model.fold), &model.net)?;
            curves.extend(model.curve.iter().copied());
            if let Some(last) = model.curve.last() {
                report.msg(format!(
                    "{} fold {}: val dice {:.4} after {} epochs",
                    target.label(),
                    model.fold,
                    last.val_dice,
                    last.epoch
                ));
            }
        }
        io::save_csv(&cfg.curves_path(target), &curves)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Stage: eval
// ---------------------------------------------------------------------------

fn eval_coverage_bundle(
    cfg: &PipelineConfig,
    rig: &Rig,
    net: &mut UNet<f32>,
    meta: &BundleMeta,
    fold: u8,
) -> Result<Vec<MetricsRecord>> {
    let dir = cfg.bundle_dir(meta.participant, meta.task);
    let (hand, covered) = grid_truth(cfg, rig, &dir)?;
    let coverage_fraction = covered.area() as f64 / hand.area() as f64;
    let baseline = resize_bilinear(
        &io::load_plane_raw(&dir.join("thermal_baseline.f32"))?,
        cfg.input_w,
        cfg.input_h,
    )?;
    let mut rows = Vec::with_capacity(TIME_OFFSETS_S.len());
    for &t in &TIME_OFFSETS_S {
        let observation = resize_bilinear(
            &io::load_plane_raw(&dir.join(obs_file_name(t)))?,
            cfg.input_w,
            cfg.input_h,
        )?;
        let input = make_task2_input(&baseline, &observation, &hand)?;
        let pred = predict_mask(net, &input)?;
        let counts = confusion(&pred, &covered, Some(&hand))?;
        rows.push(MetricsRecord {
            participant: meta.participant,
            task: meta.task,
            hand_side: meta.hand_side,
            time_offset_s: t,
            fold,
            accuracy: pixel_accuracy(&counts)?,
            dice: dice_eps(&counts, DICE_EPS),
            coverage_fraction,
        });
    }
    Ok(rows)
}

fn eval_hand_bundle(
    cfg: &PipelineConfig,
    net: &mut UNet<f32>,
    meta: &BundleMeta,
    fold: u8,
) -> Result<MetricsRecord> {
    let dir = cfg.bundle_dir(meta.participant, meta.task);
    let sample = build_hand_sample(cfg, &dir)?;
    let pred = predict_mask(net, &sample.input)?;
    let counts = confusion(&pred, &sample.target, None)?;
    Ok(MetricsRecord {
        participant: meta.participant,
        task: meta.task,
        hand_side: meta.hand_side,
        time_offset_s: 0,
        fold,
        accuracy: pixel_accuracy(&counts)?,
        dice: dice_eps(&counts, DICE_EPS),
        coverage_fraction: sample.target.area() as f64 / (cfg.input_w * cfg.input_h) as f64,
    })
}

fn stage_eval(cfg: &PipelineConfig) -> Result<StageReport> {
    let mut report = StageReport::new("eval");
    let plan = load_plan(cfg)?;
    let manifest: DatasetManifest = io::load_json(&cfg.dataset_manifest_path())?;
    let ids: Vec<u32> = plan.plan.participants.iter().map(|p| p.participant).collect();
    let split = kfold_split(&ids, cfg.folds, cfg.dataset.master_seed)?;
    let rig = load_rig(cfg)?;
    let hash = cfg.sha256()?;

    // Coverage rows, all delays, each participant scored by the model
    // that never saw them.
    let mut indexed: Vec<(usize, Vec<MetricsRecord>)> = Vec::new();
    for fold in 0..cfg.folds as u8 {
        let net_cfg = SegTarget::Coverage.net_config(cfg);
        let (net, _) = io::load_weights(&cfg.model_path(SegTarget::Coverage, fold), &net_cfg)?;
        let flat = net.flat_weights();
        let items: Vec<(usize, &BundleMeta)> = manifest
            .bundles
            .iter()
            .enumerate()
            .filter(|(_, m)| split.fold_of(m.participant) == Some(fold))
            .collect();
        let results: Vec<(usize, std::result::Result<Vec<MetricsRecord>, String>)> = items
            .par_iter()
            .map_init(
                || {
                    let mut worker = UNet::<f32>::new(net_cfg).expect("config validated");
                    worker.load_flat(&flat).expect("same architecture");
                    worker
                },
                |net, &(idx, meta)| {
                    let rows = eval_coverage_bundle(cfg, &rig, net, meta, fold)
                        .map_err(|e| format!("coverage {}: {e}", bundle_label(meta)));
                    (idx, rows)
                },
            )
            .collect();
        for (idx, r) in results {
            match r {
                Ok(rows) => indexed.push((idx, rows)),
                Err(failure) => report.failures.push(failure),
            }
        }
    }
    indexed.sort_by_key(|&(idx, _)| idx);
    let rows: Vec<MetricsRecord> = indexed.into_iter().flat_map(|(_, r)| r).collect();
    if rows.is_empty() {
        return Err(Error::EmptyRecords);
    }
    for r in &rows {
        r.validate()?;
    }
    io::save_csv(&cfg.metrics_path(), &rows)?;
    io::save_json(
        &io::sidecar_path(&cfg.metrics_path()),
        &TableSidecar {
            seed: cfg.dataset.master_seed,
            config_sha256: hash.clone(),
            rows: rows.len(),
        },
    )?;
    report.msg(format!("coverage metrics: {} rows", rows.len()));

    // Hand-segmentation rows, one per bundle.
    let mut indexed_hand: Vec<(usize, MetricsRecord)> = Vec::new();
    for fold in 0..cfg.folds as u8 {
        let net_cfg = SegTarget::Hand.net_config(cfg);
        let (net, _) = io::load_weights(&cfg.model_path(SegTarget::Hand, fold), &net_cfg)?;
        let flat = net.flat_weights();
        let items: Vec<(usize, &BundleMeta)> = manifest
            .bundles
            .iter()
            .enumerate()
            .filter(|(_, m)| split.fold_of(m.participant) == Some(fold))
            .collect();
        let results: Vec<(usize, std::result::Result<MetricsRecord, String>)> = items
            .par_iter()
            .map_init(
                || {
                    let mut worker = UNet::<f32>::new(net_cfg).expect("config validated");
                    worker.load_flat(&flat).expect("same architecture");
                    worker
                },
                |net, &(idx, meta)| {
                    let row = eval_hand_bundle(cfg, net, meta, fold)
                        .map_err(|e| format!("hand {}: {e}", bundle_label(meta)));
                    (idx, row)
                },
            )
            .collect();
        for (idx, r) in results {
            match r {
                Ok(row) => indexed_hand.push((idx, row)),
                Err(failure) => report.failures.push(failure),
            }
        }
    }
    indexed_hand.sort_by_key(|&(idx, _)| idx);
    let hand_rows: Vec<MetricsRecord> = indexed_hand.into_iter().map(|(_, r)| r).collect();
    for r in &hand_rows {
        r.validate()?;
    }
    io::save_csv(&cfg.hand_metrics_path(), &hand_rows)?;
    io::save_json(
        &io::sidecar_path(&cfg.hand_metrics_path()),
        &TableSidecar { seed: cfg.dataset.master_seed, config_sha256: hash, rows: hand_rows.len() },
    )?;
    report.msg(format!("hand metrics: {} rows", hand_rows.len()));
    Ok(report)
}

// ---------------------------------------------------------------------------
// Stage: report
// ---------------------------------------------------------------------------

fn stage_report(cfg: &PipelineConfig) -> Result<StageReport> {
    let mut report = StageReport::new("report");
    let plan = load_plan(cfg)?;
    let rows: Vec<MetricsRecord> = io::load_csv(&cfg.metrics_path())?;
    if rows.is_empty() {
        return Err(Error::EmptyRecords);
    }
    fs::create_dir_all(cfg.reports_dir())?;
    let hash = cfg.sha256()?;

    for dim in ["participant", "task", "hand_side", "time_offset_s", "fold"] {
        let table = aggregate(&rows, dim)?;
        io::save_csv(&cfg.reports_dir().join(format!("aggregate_{dim}.csv")), &table)?;
    }
    let bucket_of: BTreeMap<u32, HandSizeBucket> = plan
        .plan
        .participants
        .iter()
        .map(|p| Ok((p.participant, HandSizeBucket::from_length_mm(p.hand_length_mm)?)))
        .collect::<Result<_>>()?;
    let hand_size_table = aggregate_by(&rows, |r| {
        let b = bucket_of[&r.participant];
        (b as u32, b.label().to_string())
    })?;
    io::save_csv(&cfg.reports_dir().join("aggregate_hand_size.csv"), &hand_size_table)?;

    let curve = temporal_curve(&rows)?;
    io::save_csv(&cfg.temporal_csv_path(), &curve.points)?;
    fs::write(cfg.temporal_svg_path(), temporal_svg(&curve))?;
    report.msg(format!(
        "temporal rank correlation: accuracy {:+.3}, dice {:+.3}",
        curve.rho_accuracy, curve.rho_dice
    ));

    let headline: Vec<&MetricsRecord> =
        rows.iter().filter(|r| r.time_offset_s == cfg.train_offset_s).collect();
    let headline_mean_accuracy =
        headline.iter().map(|r| r.accuracy).sum::<f64>() / headline.len() as f64;
    let headline_mean_dice = headline.iter().map(|r| r.dice).sum::<f64>() / headline.len() as f64;
    report.msg(format!(
        "headline (delay {} s): mean accuracy {:.4}, mean dice {:.4} over {} rows",
        cfg.train_offset_s,
        headline_mean_accuracy,
        headline_mean_dice,
        headline.len()
    ));

    // Per-task mean coverage against per-task mean Dice.
    let headline_rows: Vec<MetricsRecord> = headline.iter().map(|&r| r.clone()).collect();
    let per_task = aggregate(&headline_rows, "task")?;
    let scatter: Vec<(f64, f64, String)> = per_task
        .iter()
        .map(|t| (t.mean_coverage, t.mean_dice, t.group.clone()))
        .collect();
    fs::write(
        cfg.scatter_svg_path(),
        scatter_svg(&scatter, "mean coverage fraction", "mean dice"),
    )?;
    let dice_vs_coverage = if per_task.len() >= 3 {
        let cov: Vec<f64> = per_task.iter().map(|t| t.mean_coverage).collect();
        let dice: Vec<f64> = per_task.iter().map(|t| t.mean_dice).collect();
        match spearman(&cov, &dice) {
            Ok(test) => {
                report.msg(format!(
                    "coverage vs dice across {} tasks: rho {:+.3} (p {:.4})",
                    per_task.len(),
                    test.statistic,
                    test.p_value
                ));
                Some(test)
            }
            Err(e) => {
                report.msg(format!("coverage-dice correlation skipped: {e}"));
                None
            }
        }
    } else {
        report.msg(format!(
            "coverage-dice correlation skipped: only {} tasks",
            per_task.len()
        ));
        None
    };

    // Per-participant accuracy across hand-size groups.
    let mut per_participant: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for r in &headline_rows {
        let e = per_participant.entry(r.participant).or_insert((0.0, 0));
        e.0 += r.accuracy;
        e.1 += 1;
    }
    let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (p, (sum, n)) in per_participant {
        groups.entry(bucket_of[&p] as u32).or_default().push(sum / n as f64);
    }
    let usable: Vec<Vec<f64>> = groups.into_values().filter(|g| g.len() >= 2).collect();
    let accuracy_by_hand_size = if usable.len() >= 2 {
        match welch_anova(&usable) {
            Ok(test) => {
                report.msg(format!(
                    "accuracy across {} hand-size groups: F {:.3} (p {:.4})",
                    usable.len(),
                    test.statistic,
                    test.p_value
                ));
                Some(test)
            }
            Err(e) => {
                report.msg(format!("hand-size comparison skipped: {e}"));
                None
            }
        }
    } else {
        report.msg(format!(
            "hand-size comparison skipped: only {} groups with 2+ participants",
            usable.len()
        ));
        None
    };

    io::save_json(
        &cfg.analysis_path(),
        &AnalysisFile {
            seed: cfg.dataset.master_seed,
            config_sha256: hash,
            headline_time_offset_s: cfg.train_offset_s,
            headline_mean_accuracy,
            headline_mean_dice,
            temporal: curve,
            dice_vs_coverage,
            accuracy_by_hand_size,
        },
    )?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Deterministic SVG plots
// ---------------------------------------------------------------------------

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const SVG_M: f64 = 56.0;

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" \
         viewBox=\"0 0 {SVG_W} {SVG_H}\" font-family=\"monospace\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\">{title}</text>",
        SVG_W / 2.0
    );
    s
}

fn svg_unit_axes(s: &mut String, x_label: &str, y_label: &str) {
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let y = SVG_H - SVG_M - v * (SVG_H - 2.0 * SVG_M);
        let _ = writeln!(
            s,
            "<line x1=\"{SVG_M}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>",
            SVG_W - SVG_M
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.1}</text>",
            SVG_M - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        "<line x1=\"{SVG_M}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        SVG_H - SVG_M,
        SVG_W - SVG_M,
        SVG_H - SVG_M
    );
    let _ = writeln!(
        s,
        "<line x1=\"{SVG_M}\" y1=\"{SVG_M}\" x2=\"{SVG_M}\" y2=\"{:.1}\" stroke=\"black\"/>",
        SVG_H - SVG_M
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{x_label}</text>",
        SVG_W / 2.0,
        SVG_H - 12.0
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{y_label}</text>",
        SVG_H / 2.0,
        SVG_H / 2.0
    );
}

/// Mean accuracy and Dice against observation delay.
fn temporal_svg(curve: &TemporalCurve) -> String {
    let mut s = svg_open("segmentation quality vs observation delay");
    svg_unit_axes(&mut s, "observation delay (s)", "mean over bundles");
    let t_max = f64::from(*TIME_OFFSETS_S.last().expect("non-empty"));
    let px = |t: u32| SVG_M + f64::from(t) / t_max * (SVG_W - 2.0 * SVG_M);
    let py = |v: f64| SVG_H - SVG_M - v.clamp(0.0, 1.0) * (SVG_H - 2.0 * SVG_M);
    for &t in &TIME_OFFSETS_S {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{t}</text>",
            px(t),
            SVG_H - SVG_M + 16.0
        );
    }
    for (color, name, pick) in [
        ("#1f77b4", "accuracy", Box::new(|p: &crate::eval::TemporalPoint| p.mean_accuracy)
            as Box<dyn Fn(&crate::eval::TemporalPoint) -> f64>),
        ("#ff7f0e", "dice", Box::new(|p: &crate::eval::TemporalPoint| p.mean_dice)),
    ] {
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.time_offset_s), py(pick(p))))
            .collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            pts.join(" ")
        );
        for p in &curve.points {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                px(p.time_offset_s),
                py(pick(p))
            );
        }
        let ly = if name == "accuracy" { 40.0 } else { 56.0 };
        let _ = writeln!(
            s,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"12\" height=\"4\" fill=\"{color}\"/>",
            SVG_W - SVG_M - 110.0,
            ly - 4.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{ly:.1}\">{name}</text>",
            SVG_W - SVG_M - 92.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Labeled unit-square scatter, used for coverage against Dice per task.
fn scatter_svg(points: &[(f64, f64, String)], x_label: &str, y_label: &str) -> String {
    let mut s = svg_open("per-task coverage vs dice");
    svg_unit_axes(&mut s, x_label, y_label);
    let p = |v: f64| v.clamp(0.0, 1.0);
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let x = SVG_M + v * (SVG_W - 2.0 * SVG_M);
        let _ = writeln!(
            s,
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.1}</text>",
            SVG_H - SVG_M + 16.0
        );
    }
    for (x, y, label) in points {
        let cx = SVG_M + p(*x) * (SVG_W - 2.0 * SVG_M);
        let cy = SVG_H - SVG_M - p(*y) * (SVG_H - 2.0 * SVG_M);
        let _ = writeln!(s, "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"4\" fill=\"#2ca02c\"/>");
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\">{label}</text>", cx + 6.0, cy - 6.0);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::RenderOptions;

    fn temp_root(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("hhq-pipeline-{}-{name}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    fn tiny_config(root: &Path) -> PipelineConfig {
        PipelineConfig {
            dataset_dir: root.join("dataset"),
            output_dir: root.join("out"),
            dataset: DatasetConfig {
                n_participants: 2,
                master_seed: 11,
                rgb_w: 288,
                rgb_h: 216,
                thermal_w: 128,
                thermal_h: 96,
                intrinsic_views: 5,
                options: RenderOptions { rgb_noise_sd: 0.0, speckle: false },
                ..DatasetConfig::default()
            },
            folds: 2,
            input_w: 48,
            input_h: 32,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        let root = temp_root("cfg");
        let good = tiny_config(&root);
        assert!(good.validate().is_ok());

        let mut bad = good.clone();
        bad.folds = 1;
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.folds = 7; // more folds than participants
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.input_w = 50; // not divisible by 2^levels
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.train_offset_s = 7;
        assert!(bad.validate().is_err());

        let mut bad = good;
        bad.net.out_classes = 3;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn checkpoints_track_the_config_hash() {
        let root = temp_root("ckpt");
        let cfg = tiny_config(&root);
        assert!(!stage_is_complete(&cfg, "train"));
        write_checkpoint(&cfg, "train").unwrap();
        assert!(stage_is_complete(&cfg, "train"));
        assert!(!stage_is_complete(&cfg, "eval"));

        let mut altered = cfg.clone();
        altered.dataset.master_seed += 1;
        assert!(!stage_is_complete(&altered, "train"));
    }

    #[test]
    fn unknown_stage_names_are_rejected() {
        assert_eq!(canonical_stage("groundtruth").unwrap(), "extract-gt");
        assert_eq!(canonical_stage("extract-gt").unwrap(), "extract-gt");
        assert!(canonical_stage("deploy").is_err());
    }

    #[test]
    fn projection_matches_plain_scaling_without_distortion() {
        // Distortion-free camera and a pure scale+shift homography: the
        // pullback must reproduce a rectangle at the scaled position.
        let cam = CameraModel { fx: 40.0, fy: 40.0, cx: 32.0, cy: 24.0, k1: 0.0, k2: 0.0 };
        let hom =
            Homography3::from_array([3.0, 0.0, 1.0, 0.0, 3.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let (rx0, rx1, ry0, ry1) = (31usize, 97usize, 31usize, 67usize);
        let mut mask = BinaryMask::new_false(192, 144);
        for y in ry0..ry1 {
            for x in rx0..rx1 {
                mask.set(x, y, true);
            }
        }
        let grid = project_rgb_mask_to_grid(&mask, &cam, &hom, 64, 48, 64, 48).unwrap();

        let mut expected = BinaryMask::new_false(64, 48);
        for gy in 0..48 {
            for gx in 0..64 {
                // Grid pixel center maps to RGB (3g + 1).
                let rx = 3.0 * gx as f64 + 1.0;
                let ry = 3.0 * gy as f64 + 1.0;
                if rx >= rx0 as f64 && rx < rx1 as f64 && ry >= ry0 as f64 && ry < ry1 as f64 {
                    expected.set(gx, gy, true);
                }
            }
        }
        assert!(grid.iou(&expected) > 0.9, "iou {}", grid.iou(&expected));
        assert!(grid.get(15, 15) && grid.get(25, 20));
        assert!(!grid.get(5, 5) && !grid.get(60, 40));
    }

    #[test]
    fn standardized_input_is_zero_mean_unit_variance_per_channel() {
        let mut data = Vec::new();
        for y in 0..32 {
            for x in 0..32 {
                data.extend_from_slice(&[
                    (x as f32) / 32.0 * 255.0,
                    (y as f32) / 32.0 * 255.0,
                    128.0,
                ]);
            }
        }
        let img = ImagePlane::new(32, 32, 3, Role::Rgb, data).unwrap();
        let t = standardized_rgb_input(&img, 32, 32).unwrap();
        for c in 0..3 {
            let plane = &t.data[c * 1024..(c + 1) * 1024];
            let mean: f64 = plane.iter().map(|&v| v as f64).sum::<f64>() / 1024.0;
            let var: f64 = plane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 1024.0;
            assert!(mean.abs() < 1e-4, "channel {c} mean {mean}");
            if c < 2 {
                assert!((var - 1.0).abs() < 1e-3, "channel {c} var {var}");
            } else {
                // Constant channel collapses to exact zeros.
                assert!(var.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn simulate_calibrate_extract_agree_with_the_plan() {
        let root = temp_root("smoke");
        let cfg = tiny_config(&root);

        let sim = run_stage(&cfg, "simulate").unwrap();
        assert!(sim.failures.is_empty(), "simulate failures: {:?}", sim.failures);
        assert!(stage_is_complete(&cfg, "simulate"));
        let manifest: DatasetManifest = io::load_json(&cfg.dataset_manifest_path()).unwrap();
        assert_eq!(manifest.bundles.len(), 42); // 2 participants x 21 tasks

        let cal = run_stage(&cfg, "calibrate").unwrap();
        assert!(cal.failures.is_empty(), "calibrate failures: {:?}", cal.failures);
        let plan: PlanFile = io::load_json(&cfg.plan_path()).unwrap();
        let cam: CameraFile = io::load_json(&cfg.camera_path()).unwrap();
        let truth = &plan.plan.geometry.camera;
        assert!(cam.rms_px < 0.2, "intrinsic rms {}", cam.rms_px);
        assert!((cam.camera.fx - truth.fx).abs() / truth.fx < 0.02);
        assert!((cam.camera.fy - truth.fy).abs() / truth.fy < 0.02);
        let hom: HomographyFile = io::load_json(&cfg.homography_path()).unwrap();
        assert!(hom.transfer_rms_px < 0.5, "transfer rms {}", hom.transfer_rms_px);

        let gt = run_stage(&cfg, "extract-gt").unwrap();
        assert!(gt.failures.is_empty(), "extraction failures: {:?}", gt.failures);
        // Noiseless renders: the extracted labels must match the painted
        // truth almost exactly.
        let meta = &manifest.bundles[0];
        let dir = cfg.bundle_dir(meta.participant, meta.task);
        let hand = io::load_mask_png(&dir.join("gt_hand_roi.png")).unwrap();
        let covered = io::load_mask_png(&dir.join("gt_covered.png")).unwrap();
        let truth_hand = io::load_mask_png(&dir.join("truth_hand_roi.png")).unwrap();
        let truth_covered = io::load_mask_png(&dir.join("truth_covered.png")).unwrap();
        assert!(hand.iou(&truth_hand) >= 0.99, "hand iou {}", hand.iou(&truth_hand));
        assert!(
            covered.iou(&truth_covered) >= 0.99,
            "covered iou {}",
            covered.iou(&truth_covered)
        );
    }
}
