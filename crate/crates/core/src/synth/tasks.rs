//! The 30-task protocol: stamped shapes, brush applications at 0/50/100%
//! coverage, individual handrub steps (always preceded by the palm-to-palm
//! step), and the entire six-step procedure. Tasks 1–15 observe the
//! dorsal side, 16–30 the palmar side, with matching pattern tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::hand::{point_in_polygon, HandPose};
use crate::error::{Error, Result};
use crate::eval::HandSide;
use crate::imaging::BinaryMask;

/// Which hand of the pair a pattern is being generated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chirality {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StampShape {
    Circle,
    Hexagon,
    Rectangle,
    Star,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrushAmount {
    None,
    TopHalf,
    LowerHalf,
    Full,
}

/// Handrub steps contributing coverage to one specific hand.
pub type StepList = &'static [u8];

/// Per-hand pattern prescription of one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Stamp { left: StampShape, right: StampShape },
    Brush { left: BrushAmount, right: BrushAmount },
    Steps { left: StepList, right: StepList },
    EntireProcedure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSpec {
    pub task: u8,
    pub side: HandSide,
    pub kind: TaskKind,
}

/// Task table. The step annotations resolve the acting hand of the
/// asymmetric steps to the hand that receives the rub: "right palm over
/// left dorsum" marks the left hand, "left thumb clasped in right palm"
/// marks the left thumb, "fingers of right hand in left palm" marks the
/// right fingertips — and mirrored for the (L) variants.
pub fn task_spec(task: u8) -> Result<TaskSpec> {
    use BrushAmount as B;
    use StampShape as S;
    if !(1..=30).contains(&task) {
        return Err(Error::UnknownTask(task));
    }
    let side = if task <= 15 { HandSide::Dorsal } else { HandSide::Palmar };
    // Step lists per hand; step 1 always precedes the exercised step.
    const S1: StepList = &[1];
    const S12: StepList = &[1, 2];
    const S13: StepList = &[1, 3];
    const S14: StepList = &[1, 4];
    const S15: StepList = &[1, 5];
    const S16: StepList = &[1, 6];
    let kind = match task {
        1 => TaskKind::Stamp { left: S::Circle, right: S::Hexagon },
        2 => TaskKind::Stamp { left: S::Rectangle, right: S::Star },
        3 => TaskKind::Brush { left: B::None, right: B::Full },
        4 => TaskKind::Brush { left: B::TopHalf, right: B::LowerHalf },
        16 => TaskKind::Stamp { left: S::Hexagon, right: S::Circle },
        17 => TaskKind::Stamp { left: S::Star, right: S::Rectangle },
        18 => TaskKind::Brush { left: B::Full, right: B::None },
        19 => TaskKind::Brush { left: B::LowerHalf, right: B::TopHalf },
        5 | 20 => TaskKind::Steps { left: S1, right: S1 },
        6 | 21 => TaskKind::Steps { left: S12, right: S1 },
        7 | 22 => TaskKind::Steps { left: S1, right: S12 },
        8 | 23 => TaskKind::Steps { left: S13, right: S13 },
        9 | 24 => TaskKind::Steps { left: S14, right: S14 },
        10 | 25 => TaskKind::Steps { left: S15, right: S1 },
        11 | 26 => TaskKind::Steps { left: S1, right: S15 },
        12 | 27 => TaskKind::Steps { left: S1, right: S16 },
        13 | 28 => TaskKind::Steps { left: S16, right: S1 },
        14 | 15 | 29 | 30 => TaskKind::EntireProcedure,
        _ => unreachable!("task range checked above"),
    };
    Ok(TaskSpec { task, side, kind })
}

/// Covered-area mask for one hand of a task, in RGB image coordinates.
/// Always a subset of the hand's above-wrist region. Stamp positions,
/// stamp orientations and the imperfect-rub erosions of the full
/// procedure are drawn from `seed`.
pub fn coverage_pattern(
    task: u8,
    pose: &HandPose,
    which: Chirality,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<BinaryMask> {
    let spec = task_spec(task)?;
    let roi = pose.rasterize(width, height, HandPose::in_hand_roi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (which as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mask = match spec.kind {
        TaskKind::Stamp { left, right } => {
            let shape = if which == Chirality::Left { left } else { right };
            stamp_mask(pose, shape, width, height, &mut rng)?
        }
        TaskKind::Brush { left, right } => {
            let amount = if which == Chirality::Left { left } else { right };
            return brush_mask(&roi, amount);
        }
        TaskKind::Steps { left, right } => {
            let steps = if which == Chirality::Left { left } else { right };
            pose.rasterize(width, height, |h, x, y| {
                steps.iter().any(|&s| step_template(h, s, x, y))
            })
        }
        TaskKind::EntireProcedure => {
            let full = pose.rasterize(width, height, HandPose::tpl_all_steps);
            erode_with_seeded_disks(&full, pose, &mut rng)
        }
    };
    mask.and(&roi)
}

fn step_template(h: &HandPose, step: u8, x: f64, y: f64) -> bool {
    match step {
        1 => h.tpl_palm_disk(x, y),
        2 => h.tpl_dorsum_stripes(x, y),
        3 => h.tpl_web_stripes(x, y),
        4 => h.tpl_knuckle_band(x, y),
        5 => h.tpl_thumb_lobe(x, y),
        6 => h.tpl_fingertip_arc(x, y),
        _ => unreachable!("step lists only contain 1..=6"),
    }
}

/// Stamp membership rasterized at a seeded position and orientation
/// inside the palm. Sizes are chosen so every shape fits the palm
/// ellipse whatever the seed.
fn stamp_mask(
    pose: &HandPose,
    shape: StampShape,
    width: usize,
    height: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BinaryMask> {
    let l = pose.length_mm;
    let cx = rng.random_range(-0.06..0.06) * l;
    let cy = -0.30 * l + rng.random_range(-0.06..0.06) * l;
    let rot = rng.random_range(0.0..std::f64::consts::TAU);
    let poly: Option<Vec<(f64, f64)>> = match shape {
        StampShape::Circle => None,
        StampShape::Hexagon => Some(regular_polygon((cx, cy), 0.105 * l, rot, 6)),
        StampShape::Rectangle => Some(rotated_rectangle((cx, cy), 0.085 * l, 0.060 * l, rot)),
        StampShape::Star => Some(star_polygon((cx, cy), 0.12 * l, 0.048 * l, rot)),
    };
    Ok(match poly {
        None => {
            let r = 0.095 * l;
            pose.rasterize(width, height, |_, x, y| {
                let dx = x - cx;
                let dy = y - cy;
                dx * dx + dy * dy <= r * r
            })
        }
        Some(p) => pose.rasterize(width, height, |_, x, y| point_in_polygon(x, y, &p)),
    })
}

fn regular_polygon(c: (f64, f64), r: f64, rot: f64, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let a = rot + i as f64 / n as f64 * std::f64::consts::TAU;
            (c.0 + r * a.cos(), c.1 + r * a.sin())
        })
        .collect()
}

fn rotated_rectangle(c: (f64, f64), hx: f64, hy: f64, rot: f64) -> Vec<(f64, f64)> {
    let (s, co) = rot.sin_cos();
    [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)]
        .iter()
        .map(|&(x, y)| (c.0 + x * co - y * s, c.1 + x * s + y * co))
        .collect()
}

fn star_polygon(c: (f64, f64), outer: f64, inner: f64, rot: f64) -> Vec<(f64, f64)> {
    (0..10)
        .map(|i| {
            let r = if i % 2 == 0 { outer } else { inner };
            let a = rot + i as f64 / 10.0 * std::f64::consts::TAU;
            (c.0 + r * a.cos(), c.1 + r * a.sin())
        })
        .collect()
}

/// 0% → empty, 100% → the whole region, and the half variants split the
/// region's area at the row that best balances the two halves.
fn brush_mask(roi: &BinaryMask, amount: BrushAmount) -> Result<BinaryMask> {
    match amount {
        BrushAmount::None => Ok(BinaryMask::new_false(roi.width, roi.height)),
        BrushAmount::Full => Ok(roi.clone()),
        BrushAmount::TopHalf => Ok(top_half(roi)),
        BrushAmount::LowerHalf => roi.minus(&top_half(roi)),
    }
}

/// Rows from the top whose cumulative area comes closest to half the
/// region's area.
fn top_half(roi: &BinaryMask) -> BinaryMask {
    let half = roi.area() as f64 / 2.0;
    let mut best_row = 0usize;
    let mut best_gap = f64::INFINITY;
    let mut cum = 0usize;
    for y in 0..roi.height {
        for x in 0..roi.width {
            if roi.get(x, y) {
                cum += 1;
            }
        }
        let gap = (cum as f64 - half).abs();
        if gap < best_gap {
            best_gap = gap;
            best_row = y;
        }
    }
    let mut out = BinaryMask::new_false(roi.width, roi.height);
    for y in 0..=best_row {
        for x in 0..roi.width {
            if roi.get(x, y) {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Imperfect rub: subtract a few small seeded disks from the mask.
fn erode_with_seeded_disks(mask: &BinaryMask, pose: &HandPose, rng: &mut ChaCha8Rng) -> BinaryMask {
    let (x0, x1, y0, y1) = pose.bounds_px();
    let mut out = mask.clone();
    let n = rng.random_range(4..=6);
    for _ in 0..n {
        let cx = rng.random_range(x0..x1);
        let cy = rng.random_range(y0..y1.min(pose.wrist_y));
        let r = pose.length_mm * pose.px_per_mm * rng.random_range(0.02..0.045);
        let xa = (cx - r).floor().max(0.0) as usize;
        let xb = ((cx + r).ceil() as usize + 1).min(mask.width);
        let ya = (cy - r).floor().max(0.0) as usize;
        let yb = ((cy + r).ceil() as usize + 1).min(mask.height);
        for y in ya..yb {
            for x in xa..xb {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                if dx * dx + dy * dy <= r * r {
                    out.set(x, y, false);
                }
            }
        }
    }
    out
}
