//! Otsu's global threshold on a 256-bin histogram.

use super::Histogram256;
use crate::error::{Error, Result};

/// Returns the threshold `t` maximizing the between-class variance of the
/// split `bins <= t` vs `bins > t`. Evaluates all 256 candidates with
/// cumulative sums in f64; ties and degenerate splits (an empty class has
/// zero between-class variance) resolve to the smallest `t`.
pub fn otsu_threshold(hist: &Histogram256) -> Result<u8> {
    let total = hist.total();
    if total == 0 {
        return Err(Error::EmptyHistogram);
    }
    let total_f = total as f64;
    let mut weighted_total = 0.0f64;
    for (i, &c) in hist.counts.iter().enumerate() {
        weighted_total += i as f64 * c as f64;
    }

    let mut best_t = 0u8;
    let mut best_var = f64::NEG_INFINITY;
    let mut w0 = 0.0f64; // pixels at or below t
    let mut sum0 = 0.0f64; // weighted sum at or below t
    for t in 0..=255usize {
        w0 += hist.counts[t] as f64;
        sum0 += t as f64 * hist.counts[t] as f64;
        let w1 = total_f - w0;
        let var = if w0 <= 0.0 || w1 <= 0.0 {
            0.0
        } else {
            let mu0 = sum0 / w0;
            let mu1 = (weighted_total - sum0) / w1;
            let d = mu0 - mu1;
            w0 / total_f * (w1 / total_f) * d * d
        };
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    Ok(best_t)
}
