//! Desk-scale thermal hand-hygiene quality measurement pipeline.
//!
//! The crate generates fully synthetic experiment data and reproduces the
//! measurement chain end to end:
//!
//! 1. **synth** – parametric hand scenes: white-light RGB, UV fluorescence,
//!    thermal baseline/observation frames, chessboard calibration renders,
//!    all with exact ground truth and known dual-camera geometry.
//! 2. **calib** – thermal-camera intrinsics (Zhang initialization + damped
//!    Gauss–Newton refinement), radial undistortion and the thermal→RGB
//!    homography used to bring every thermal frame into RGB coordinates.
//! 3. **groundtruth** – the UV reference pipeline: YUV/Otsu hand
//!    segmentation, wrist-line cropping, HSV band extraction of
//!    alcohol-covered areas.
//! 4. **net** – a from-scratch micro U-Net (forward, backward, Combo loss,
//!    RMSprop, plateau LR schedule) for hand and coverage segmentation.
//! 5. **eval** / **stats** – per-image accuracy and ε-Dice, 5-fold splits,
//!    grouped aggregation, temporal curves, Welch ANOVA and Spearman tests.
//!
//! The `pipeline` module ties 1–5 together for the CLI and the acceptance
//! suite.

pub mod calib;
pub mod error;
pub mod eval;
pub mod groundtruth;
pub mod imaging;
pub mod io;
pub mod net;
pub mod pipeline;
pub mod seed;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
