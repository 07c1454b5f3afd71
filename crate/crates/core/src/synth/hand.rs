//! Parametric 2-D hand silhouettes: a palm ellipse, four finger capsules
//! and a thumb capsule, all proportional to hand length, plus the region
//! templates (palm disk, stripes, webs, knuckle band, thumb lobe,
//! fingertip arc) that the coverage patterns are built from.

use crate::imaging::BinaryMask;

/// Placement of one hand in RGB image coordinates. The canonical hand
/// frame has the wrist-crease midpoint at the origin, fingers toward
/// negative y, forearm toward positive y, and units of millimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandPose {
    /// Wrist-to-middle-fingertip length in millimeters.
    pub length_mm: f64,
    /// Isotropic scale from canonical millimeters to image pixels.
    pub px_per_mm: f64,
    /// Image position of the canonical origin (wrist midpoint).
    pub wrist_x: f64,
    pub wrist_y: f64,
    /// Rotation of the canonical frame into the image, radians.
    pub angle_rad: f64,
    /// +1 when the thumb sits on the canonical +x side, −1 otherwise.
    pub thumb_dir: f64,
}

/// The four fingers as (thumb-relative x offset, length), both fractions
/// of hand length: index, middle, ring, little.
const FINGERS: [(f64, f64); 4] = [(0.165, 0.34), (0.055, 0.43), (-0.055, 0.39), (-0.165, 0.28)];

const FINGER_BASE_Y: f64 = -0.52;
const FINGER_RADIUS: f64 = 0.045;
const PALM_CENTER_Y: f64 = -0.32;
const PALM_SEMI_X: f64 = 0.22;
const PALM_SEMI_Y: f64 = 0.30;
const FOREARM_LEN: f64 = 0.45;
const FOREARM_RADIUS: f64 = 0.13;
const THUMB_FROM: (f64, f64) = (0.20, -0.25);
const THUMB_TO: (f64, f64) = (0.36, -0.38);
const THUMB_RADIUS: f64 = 0.055;
/// Half-width of the wrist span used for annotation, as a fraction of
/// hand length.
const WRIST_HALF_SPAN: f64 = 0.16;

impl HandPose {
    /// Image pixel → canonical millimeters.
    pub fn to_canonical(&self, px: f64, py: f64) -> (f64, f64) {
        let dx = px - self.wrist_x;
        let dy = py - self.wrist_y;
        let (s, c) = self.angle_rad.sin_cos();
        ((dx * c + dy * s) / self.px_per_mm, (-dx * s + dy * c) / self.px_per_mm)
    }

    /// Canonical millimeters → image pixel.
    pub fn to_image(&self, x_mm: f64, y_mm: f64) -> (f64, f64) {
        let (s, c) = self.angle_rad.sin_cos();
        (
            self.wrist_x + self.px_per_mm * (x_mm * c - y_mm * s),
            self.wrist_y + self.px_per_mm * (x_mm * s + y_mm * c),
        )
    }

    fn l(&self) -> f64 {
        self.length_mm
    }

    /// Full skin silhouette: forearm, palm, fingers and thumb.
    pub fn in_silhouette(&self, x_mm: f64, y_mm: f64) -> bool {
        self.in_palm(x_mm, y_mm)
            || self.in_any_finger(x_mm, y_mm)
            || self.in_thumb(x_mm, y_mm, THUMB_RADIUS)
            || self.in_forearm(x_mm, y_mm)
    }

    /// Silhouette restricted to the finger side of the wrist line
    /// (canonical y ≤ 0).
    pub fn in_hand_roi(&self, x_mm: f64, y_mm: f64) -> bool {
        y_mm <= 0.0 && self.in_silhouette(x_mm, y_mm)
    }

    fn in_forearm(&self, x: f64, y: f64) -> bool {
        let l = self.l();
        in_capsule(x, y, (0.0, 0.0), (0.0, FOREARM_LEN * l), FOREARM_RADIUS * l)
    }

    fn in_palm(&self, x: f64, y: f64) -> bool {
        let l = self.l();
        let ex = x / (PALM_SEMI_X * l);
        let ey = (y - PALM_CENTER_Y * l) / (PALM_SEMI_Y * l);
        ex * ex + ey * ey <= 1.0
    }

    fn finger_geometry(&self, i: usize) -> ((f64, f64), (f64, f64), f64) {
        let l = self.l();
        let (xi, len) = FINGERS[i];
        let x = xi * self.thumb_dir * l;
        let base = (x, FINGER_BASE_Y * l);
        let tip = (x, (FINGER_BASE_Y - len) * l);
        (base, tip, FINGER_RADIUS * l)
    }

    fn in_any_finger(&self, x: f64, y: f64) -> bool {
        (0..4).any(|i| {
            let (a, b, r) = self.finger_geometry(i);
            in_capsule(x, y, a, b, r)
        })
    }

    fn in_thumb(&self, x: f64, y: f64, radius_frac: f64) -> bool {
        let l = self.l();
        let d = self.thumb_dir;
        in_capsule(
            x,
            y,
            (THUMB_FROM.0 * d * l, THUMB_FROM.1 * l),
            (THUMB_TO.0 * d * l, THUMB_TO.1 * l),
            radius_frac * l,
        )
    }

    /// Wrist annotation span endpoints in image coordinates.
    pub fn wrist_span(&self) -> ((f64, f64), (f64, f64)) {
        let l = self.l();
        (self.to_image(-WRIST_HALF_SPAN * l, 0.0), self.to_image(WRIST_HALF_SPAN * l, 0.0))
    }

    /// Half-extents of the pose in image pixels: a conservative bounding
    /// box around the silhouette, for placement checks.
    pub fn bounds_px(&self) -> (f64, f64, f64, f64) {
        let l = self.l() * self.px_per_mm;
        let reach = 0.45 * l;
        (self.wrist_x - reach, self.wrist_x + reach, self.wrist_y - 1.05 * l, self.wrist_y + FOREARM_LEN * l)
    }

    // ---- coverage templates (canonical mm) ----

    /// Rub palm to palm: central palm disk.
    pub fn tpl_palm_disk(&self, x: f64, y: f64) -> bool {
        let l = self.l();
        in_disk(x, y, (0.0, -0.30 * l), 0.20 * l)
    }

    /// Palm over dorsum with interlaced fingers: stripes along the finger
    /// columns crossing the back of the hand.
    pub fn tpl_dorsum_stripes(&self, x: f64, y: f64) -> bool {
        let l = self.l();
        if !(self.in_palm(x, y) || self.in_any_finger(x, y)) {
            return false;
        }
        if !(-0.95 * l..=-0.05 * l).contains(&y) {
            return false;
        }
        (0..4).any(|i| {
            let (base, _, _) = self.finger_geometry(i);
            (x - base.0).abs() <= 0.030 * l
        })
    }

    /// Palm to palm with fingers interlaced: stripes in the webs between
    /// the fingers.
    pub fn tpl_web_stripes(&self, x: f64, y: f64) -> bool {
        let l = self.l();
        if !self.in_silhouette(x, y) || !(-0.66 * l..=-0.38 * l).contains(&y) {
            return false;
        }
        [-0.11, 0.0, 0.11].iter().any(|w| (x - w * l).abs() <= 0.028 * l)
    }

    /// Backs of fingers to opposing palms: band across the knuckles.
    pub fn tpl_knuckle_band(&self, x: f64, y: f64) -> bool {
        let l = self.l();
        (self.in_palm(x, y) || self.in_any_finger(x, y)) && (-0.60 * l..=-0.47 * l).contains(&y)
    }

    /// Rotational rubbing of the thumb: dilated thumb capsule.
    pub fn tpl_thumb_lobe(&self, x: f64, y: f64) -> bool {
        self.in_thumb(x, y, 0.075)
    }

    /// Rotational rubbing of fingertips in the palm: disks at the four
    /// fingertips.
    pub fn tpl_fingertip_arc(&self, x: f64, y: f64) -> bool {
        let l = self.l();
        (0..4).any(|i| {
            let (_, tip, _) = self.finger_geometry(i);
            in_disk(x, y, tip, 0.055 * l)
        })
    }

    /// All six step templates together (the full-procedure coverage
    /// before imperfect-rub erosion).
    pub fn tpl_all_steps(&self, x: f64, y: f64) -> bool {
        self.tpl_palm_disk(x, y)
            || self.tpl_dorsum_stripes(x, y)
            || self.tpl_web_stripes(x, y)
            || self.tpl_knuckle_band(x, y)
            || self.tpl_thumb_lobe(x, y)
            || self.tpl_fingertip_arc(x, y)
    }

    /// Rasterizes a canonical-frame membership predicate over a
    /// `width`×`height` image, sampling at pixel centers.
    pub fn rasterize<F>(&self, width: usize, height: usize, member: F) -> BinaryMask
    where
        F: Fn(&HandPose, f64, f64) -> bool,
    {
        let (x0, x1, y0, y1) = self.bounds_px();
        let xa = x0.floor().max(0.0) as usize;
        let xb = (x1.ceil() as usize + 1).min(width);
        let ya = y0.floor().max(0.0) as usize;
        let yb = (y1.ceil() as usize + 1).min(height);
        let mut mask = BinaryMask::new_false(width, height);
        for y in ya..yb {
            for x in xa..xb {
                let (cx, cy) = self.to_canonical(x as f64, y as f64);
                if member(self, cx, cy) {
                    mask.set(x, y, true);
                }
            }
        }
        mask
    }
}

fn in_disk(x: f64, y: f64, c: (f64, f64), r: f64) -> bool {
    let dx = x - c.0;
    let dy = y - c.1;
    dx * dx + dy * dy <= r * r
}

fn in_capsule(x: f64, y: f64, a: (f64, f64), b: (f64, f64), r: f64) -> bool {
    let abx = b.0 - a.0;
    let aby = b.1 - a.1;
    let apx = x - a.0;
    let apy = y - a.1;
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 { ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let dx = apx - t * abx;
    let dy = apy - t * aby;
    dx * dx + dy * dy <= r * r
}

/// Even–odd test for a point inside a simple polygon (used for the
/// hexagon and star stamps).
pub fn point_in_polygon(x: f64, y: f64, vertices: &[(f64, f64)]) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = vertices[i];
        let (xj, yj) = vertices[j];
        if ((yi > y) != (yj > y)) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}
