//! Combo segmentation loss: weighted sum of pixel cross-entropy and a
//! soft-Dice term, with its analytic gradient with respect to the logits.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::imaging::BinaryMask;

/// Loss evaluation: the scalar pieces and the logit gradient.
pub struct LossValue<S> {
    pub loss: f64,
    pub cross_entropy: f64,
    pub soft_dice: f64,
    pub dlogits: Tensor<S>,
}

/// Per-pixel class probabilities via a numerically stable softmax over
/// the channel axis. Output has the same shape as the logits.
pub fn softmax_probs<S: Scalar>(logits: &Tensor<S>) -> Tensor<S> {
    let [b, c, h, w] = logits.shape();
    let plane = h * w;
    let mut out = Tensor::zeros([b, c, h, w]);
    for bi in 0..b {
        let li = logits.item(bi);
        let oi = out.item_mut(bi);
        for p in 0..plane {
            let mut m = f64::NEG_INFINITY;
            for ci in 0..c {
                m = m.max(li[ci * plane + p].to_f64());
            }
            let mut z = 0.0f64;
            for ci in 0..c {
                z += (li[ci * plane + p].to_f64() - m).exp();
            }
            for ci in 0..c {
                let e = (li[ci * plane + p].to_f64() - m).exp();
                oi[ci * plane + p] = S::from_f64(e / z);
            }
        }
    }
    out
}

/// Smoothing constant of the soft-Dice term.
pub const DICE_SMOOTHING: f64 = 1.0;

/// Computes `alpha * CE + (1 - alpha) * (1 - softDice)` over a batch of
/// two-class logits against binary masks (channel 1 = foreground), along
/// with the gradient of the scalar loss with respect to every logit.
///
/// The soft-Dice statistic pools intersection and sums over the whole
/// batch: `(2*sum(p*t) + s) / (sum(p) + sum(t) + s)` with `s = 1`.
pub fn combo_loss<S: Scalar>(
    logits: &Tensor<S>,
    targets: &[BinaryMask],
    alpha: f64,
) -> Result<LossValue<S>> {
    let [b, c, h, w] = logits.shape();
    if c != 2 {
        return Err(Error::ShapeMismatch(format!("combo loss needs 2 classes, got {c}")));
    }
    if targets.len() != b {
        return Err(Error::ShapeMismatch(format!(
            "batch has {b} items but {} target masks",
            targets.len()
        )));
    }
    for (i, t) in targets.iter().enumerate() {
        if t.width != w || t.height != h {
            return Err(Error::ShapeMismatch(format!(
                "target {i} is {}x{}, logits are {w}x{h}",
                t.width, t.height
            )));
        }
    }
    let plane = h * w;
    let n_pix = (b * plane) as f64;
    // Forward: accumulate CE and the Dice sums in f64.
    let mut ce = 0.0f64;
    let mut sum_pt = 0.0f64;
    let mut sum_p = 0.0f64;
    let mut sum_t = 0.0f64;
    // Cache foreground probability per pixel for the backward pass.
    let mut p_fg = vec![0.0f64; b * plane];
    for bi in 0..b {
        let li = logits.item(bi);
        let bits = &targets[bi].bits;
        for p in 0..plane {
            let z0 = li[p].to_f64();
            let z1 = li[plane + p].to_f64();
            let m = z0.max(z1);
            let lse = m + ((z0 - m).exp() + (z1 - m).exp()).ln();
            let pf = (z1 - lse).exp();
            p_fg[bi * plane + p] = pf;
            let t = bits[p];
            ce -= if t { z1 - lse } else { z0 - lse };
            sum_p += pf;
            if t {
                sum_pt += pf;
                sum_t += 1.0;
            }
        }
    }
    ce /= n_pix;
    let s = DICE_SMOOTHING;
    let numer = 2.0 * sum_pt + s;
    let denom = sum_p + sum_t + s;
    let soft_dice = numer / denom;
    let loss = alpha * ce + (1.0 - alpha) * (1.0 - soft_dice);
    // Backward. For the two-class softmax with p = p_fg:
    //   dCE/dz1 = (p - t)/N, dCE/dz0 = -(p - t)/N
    //   dDice/dp_i = (2*t_i*denom - numer)/denom^2, dp/dz1 = p(1-p) = -dp/dz0.
    let mut dlogits = Tensor::zeros([b, c, h, w]);
    let d2 = denom * denom;
    for bi in 0..b {
        let bits = &targets[bi].bits;
        let di = dlogits.item_mut(bi);
        for p in 0..plane {
            let pf = p_fg[bi * plane + p];
            let t = if bits[p] { 1.0 } else { 0.0 };
            let g_ce = (pf - t) / n_pix;
            let ddice_dp = (2.0 * t * denom - numer) / d2;
            let dp_dz1 = pf * (1.0 - pf);
            let g = alpha * g_ce + (1.0 - alpha) * (-ddice_dp) * dp_dz1;
            di[plane + p] = S::from_f64(g);
            di[p] = S::from_f64(-g);
        }
    }
    Ok(LossValue { loss, cross_entropy: ce, soft_dice, dlogits })
}
