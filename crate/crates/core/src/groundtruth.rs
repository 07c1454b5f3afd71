//! Ground-truth extraction from white-light and UV photographs: hand
//! segmentation via the YUV red-difference chroma channel and Otsu's
//! threshold, wrist-line cropping to the region of interest, and
//! fluorescent-dye coverage extraction with an HSV hue band plus a
//! brightness gate that rejects residual-dye speckle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{
    label_components, largest_components, otsu_threshold, rgb_to_hsv, rgb_to_yuv, threshold_band,
    BinaryMask, Histogram256, ImagePlane,
};

/// Smallest fraction of the image area a connected component must cover
/// to count as a hand.
const MIN_HAND_AREA_FRACTION: f64 = 0.005;

/// Minimum distance of the foreground's mean V from the neutral 128.
/// Below this the scene is all low-chroma background and Otsu is just
/// splitting noise.
const MIN_CHROMA_OFFSET: f64 = 8.0;

/// Thresholds of the extraction pipeline. Defaults are the operating
/// values of the UV-dye protocol: fluorescent hue band 25–97 on the
/// half-degree scale and brightness gate 60.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub hue_lo: f32,
    pub hue_hi: f32,
    pub value_min: f32,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { hue_lo: 25.0, hue_hi: 97.0, value_min: 60.0 }
    }
}

/// Wrist crease of one hand: a segment between two labeled points in RGB
/// pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WristSpan {
    pub a: (f64, f64),
    pub b: (f64, f64),
}

/// Wrist annotations for a scene; one span per hand, at most two hands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WristLine {
    pub spans: Vec<WristSpan>,
}

impl WristLine {
    pub fn new(spans: Vec<WristSpan>) -> Result<Self> {
        if spans.is_empty() || spans.len() > 2 {
            return Err(Error::WristOutsideImage(format!(
                "expected 1 or 2 wrist spans, got {}",
                spans.len()
            )));
        }
        for s in &spans {
            if s.a == s.b {
                return Err(Error::WristOutsideImage("degenerate wrist span (identical points)".into()));
            }
        }
        Ok(Self { spans })
    }

    /// Mirrors the annotation across the vertical axis of a `width`-pixel
    /// image, matching [`BinaryMask::flip_horizontal`].
    pub fn flip_horizontal(&self, width: usize) -> WristLine {
        let w = (width - 1) as f64;
        let spans = self
            .spans
            .iter()
            .map(|s| WristSpan { a: (w - s.a.0, s.a.1), b: (w - s.b.0, s.b.1) })
            .collect();
        WristLine { spans }
    }
}

/// Extracted label pair: the above-wrist hand region and the alcohol
/// covered subset of it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMasks {
    pub hand_roi: BinaryMask,
    pub covered: BinaryMask,
}

impl GroundTruthMasks {
    pub fn new(hand_roi: BinaryMask, covered: BinaryMask) -> Result<Self> {
        if !covered.same_dims(&hand_roi) {
            return Err(Error::DimensionMismatch("covered/hand_roi dimensions differ".into()));
        }
        if !covered.is_subset_of(&hand_roi) {
            return Err(Error::DimensionMismatch("covered mask exceeds hand roi".into()));
        }
        Ok(Self { hand_roi, covered })
    }

    pub fn flip_horizontal(&self) -> GroundTruthMasks {
        GroundTruthMasks {
            hand_roi: self.hand_roi.flip_horizontal(),
            covered: self.covered.flip_horizontal(),
        }
    }
}

/// Segments up to two hands from a white-light RGB image: convert to YUV,
/// Otsu-threshold the V (red-difference chroma) channel, and keep the two
/// largest components. The kept side of the threshold is the one whose
/// mean V sits farther from the neutral 128, so the rule is independent
/// of whether skin chroma reads above or below the background.
pub fn segment_hands_white(rgb: &ImagePlane) -> Result<BinaryMask> {
    let yuv = rgb_to_yuv(rgb)?;
    let hist = Histogram256::from_channel(&yuv, 2)?;
    let t = otsu_threshold(&hist)?;

    // Class means on the rounded scale, matching the Otsu split.
    let (mut lo_sum, mut lo_n, mut hi_sum, mut hi_n) = (0.0f64, 0u64, 0.0f64, 0u64);
    for (v, &c) in hist.counts.iter().enumerate() {
        if v <= t as usize {
            lo_sum += v as f64 * c as f64;
            lo_n += c;
        } else {
            hi_sum += v as f64 * c as f64;
            hi_n += c;
        }
    }
    let lo_mean = if lo_n > 0 { lo_sum / lo_n as f64 } else { 128.0 };
    let hi_mean = if hi_n > 0 { hi_sum / hi_n as f64 } else { 128.0 };
    let split = t as f32 + 0.5;
    let (fg_offset, fg) = if (hi_mean - 128.0).abs() >= (lo_mean - 128.0).abs() {
        ((hi_mean - 128.0).abs(), threshold_band(&yuv, 2, split, f32::INFINITY)?)
    } else {
        ((lo_mean - 128.0).abs(), threshold_band(&yuv, 2, f32::NEG_INFINITY, split)?)
    };
    if fg_offset < MIN_CHROMA_OFFSET {
        return Err(Error::NoHandFound);
    }

    let min_area = (MIN_HAND_AREA_FRACTION * (rgb.width * rgb.height) as f64).ceil() as usize;
    let comps: Vec<BinaryMask> =
        largest_components(&fg, 2).into_iter().filter(|c| c.area() >= min_area).collect();
    if comps.is_empty() {
        return Err(Error::NoHandFound);
    }
    let mut out = comps[0].clone();
    for c in &comps[1..] {
        out = out.or(c)?;
    }
    Ok(out)
}

/// Clips each hand component to the finger side of its wrist span. The
/// kept half-plane is the one holding the majority of the component's
/// quarter of pixels farthest from the bottom image edge (hands enter the
/// frame from the bottom).
pub fn crop_above_wrist(hand_mask: &BinaryMask, wrists: &WristLine) -> Result<BinaryMask> {
    let (w, h) = (hand_mask.width, hand_mask.height);
    for s in &wrists.spans {
        if s.a == s.b {
            return Err(Error::WristOutsideImage("degenerate wrist span (identical points)".into()));
        }
        for p in [s.a, s.b] {
            if p.0 < 0.0 || p.1 < 0.0 || p.0 > (w - 1) as f64 || p.1 > (h - 1) as f64 {
                return Err(Error::WristOutsideImage(format!("wrist point ({}, {}) outside image", p.0, p.1)));
            }
        }
    }

    let (labels, areas) = label_components(hand_mask);
    let mut out = BinaryMask::new_false(w, h);
    for comp in 1..=areas.len() {
        // Pixels of this component, and the quarter of them nearest the
        // top of the frame (farthest from the entry edge).
        let mut pixels: Vec<(usize, usize)> = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if labels[y * w + x] == comp as u32 {
                    pixels.push((x, y));
                }
            }
        }
        let span = nearest_span(&pixels, wrists);
        let side = finger_side(&pixels, span);
        for (x, y) in pixels {
            if side_of(span, x as f64, y as f64) * side >= 0.0 {
                out.set(x, y, true);
            }
        }
    }
    Ok(out)
}

/// Signed side of point `p` relative to the span's line (cross product of
/// the span direction with `p − a`).
fn side_of(span: &WristSpan, x: f64, y: f64) -> f64 {
    let dx = span.b.0 - span.a.0;
    let dy = span.b.1 - span.a.1;
    dx * (y - span.a.1) - dy * (x - span.a.0)
}

fn nearest_span<'a>(pixels: &[(usize, usize)], wrists: &'a WristLine) -> &'a WristSpan {
    let n = pixels.len().max(1) as f64;
    let cx = pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let cy = pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    wrists
        .spans
        .iter()
        .min_by(|s, t| {
            let d = |s: &WristSpan| {
                let mx = (s.a.0 + s.b.0) / 2.0 - cx;
                let my = (s.a.1 + s.b.1) / 2.0 - cy;
                mx * mx + my * my
            };
            d(s).partial_cmp(&d(t)).expect("finite distances")
        })
        .expect("wrist line has at least one span")
}

/// Sign of the half-plane to keep: the one holding the majority of the
/// component's top quarter (smallest y) of pixels.
fn finger_side(pixels: &[(usize, usize)], span: &WristSpan) -> f64 {
    let mut ys: Vec<usize> = pixels.iter().map(|p| p.1).collect();
    ys.sort_unstable();
    let cut = ys[(ys.len().saturating_sub(1)) / 4];
    let mut vote = 0.0;
    for &(x, y) in pixels {
        if y <= cut {
            vote += side_of(span, x as f64, y as f64).signum();
        }
    }
    if vote >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Marks fluorescent (alcohol-covered) pixels of a UV photograph inside
/// the region of interest: hue within the configured band and brightness
/// at or above the gate, the latter rejecting residual-dye speckle.
pub fn extract_uv_coverage(uv: &ImagePlane, roi: &BinaryMask, cfg: &ThresholdConfig) -> Result<BinaryMask> {
    if uv.width != roi.width || uv.height != roi.height {
        return Err(Error::DimensionMismatch(format!(
            "uv image {}x{} vs roi {}x{}",
            uv.width, uv.height, roi.width, roi.height
        )));
    }
    if cfg.hue_lo > cfg.hue_hi {
        return Err(Error::InvalidBand { lo: cfg.hue_lo, hi: cfg.hue_hi });
    }
    let hsv = rgb_to_hsv(uv)?;
    let in_hue = threshold_band(&hsv, 0, cfg.hue_lo, cfg.hue_hi)?;
    let bright = threshold_band(&hsv, 2, cfg.value_min, f32::INFINITY)?;
    in_hue.and(&bright)?.and(roi)
}

/// Full extraction: segment hands, crop above the wrists, then gate the
/// UV image. Guarantees `covered ⊆ hand_roi`.
pub fn build_ground_truth(
    rgb_white: &ImagePlane,
    uv: &ImagePlane,
    wrists: &WristLine,
    cfg: &ThresholdConfig,
) -> Result<GroundTruthMasks> {
    let hands = segment_hands_white(rgb_white)?;
    let hand_roi = crop_above_wrist(&hands, wrists)?;
    let covered = extract_uv_coverage(uv, &hand_roi, cfg)?;
    GroundTruthMasks::new(hand_roi, covered)
}
