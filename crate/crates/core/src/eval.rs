//! Metric computation and aggregation: per-image pixel accuracy and
//! ε-Dice from confusion counts, participant-level k-fold splits,
//! grouped mean/SD tables, and the 13-point temporal curves with their
//! rank correlations.

use crate::error::{Error, Result};
use crate::imaging::BinaryMask;
use crate::stats;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Additive guard of the Dice denominator so empty masks compare equal.
pub const DICE_EPS: f64 = 0.001;

/// Observation delays (seconds) at which thermal frames are evaluated.
pub const TIME_OFFSETS_S: [u32; 13] = [0, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60];

/// Pixel-level confusion counts; `fn_` is the false-negative count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Which side of the hand faces the camera for a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandSide {
    Dorsal,
    Palmar,
}

impl HandSide {
    pub fn as_str(self) -> &'static str {
        match self {
            HandSide::Dorsal => "dorsal",
            HandSide::Palmar => "palmar",
        }
    }
}

/// One evaluated image: identity plus its three per-image metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub participant: u32,
    pub task: u8,
    pub hand_side: HandSide,
    pub time_offset_s: u32,
    pub fold: u8,
    pub accuracy: f64,
    pub dice: f64,
    pub coverage_fraction: f64,
}

impl MetricsRecord {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("accuracy", self.accuracy),
            ("dice", self.dice),
            ("coverage_fraction", self.coverage_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("{name} {v} outside [0,1]")));
            }
        }
        if !(1..=30).contains(&self.task) {
            return Err(Error::UnknownTask(self.task));
        }
        Ok(())
    }
}

/// Participant → fold assignment for k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub assignment: BTreeMap<u32, u8>,
}

impl FoldSplit {
    pub fn fold_of(&self, participant: u32) -> Option<u8> {
        self.assignment.get(&participant).copied()
    }

    /// Participants assigned to `fold`.
    pub fn members(&self, fold: u8) -> Vec<u32> {
        self.assignment.iter().filter(|(_, &f)| f == fold).map(|(&p, _)| p).collect()
    }
}

/// Hand-length buckets used for the size grouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HandSizeBucket {
    XS,
    S,
    M,
    L,
}

impl HandSizeBucket {
    /// Bucket for a hand length in millimeters: XS=[160,171), S=[171,182),
    /// M=[182,192), L=[192,204).
    pub fn from_length_mm(mm: f64) -> Result<Self> {
        match mm {
            v if (160.0..171.0).contains(&v) => Ok(HandSizeBucket::XS),
            v if (171.0..182.0).contains(&v) => Ok(HandSizeBucket::S),
            v if (182.0..192.0).contains(&v) => Ok(HandSizeBucket::M),
            v if (192.0..204.0).contains(&v) => Ok(HandSizeBucket::L),
            v => Err(Error::Domain(format!("hand length {v} mm outside [160,204)"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            HandSizeBucket::XS => "XS",
            HandSizeBucket::S => "S",
            HandSizeBucket::M => "M",
            HandSizeBucket::L => "L",
        }
    }
}

/// Counts pred-vs-truth agreement per pixel, restricted to `roi` when
/// one is given.
pub fn confusion(pred: &BinaryMask, truth: &BinaryMask, roi: Option<&BinaryMask>) -> Result<ConfusionCounts> {
    if !pred.same_dims(truth) {
        return Err(Error::DimensionMismatch(format!(
            "pred {}x{} vs truth {}x{}",
            pred.width, pred.height, truth.width, truth.height
        )));
    }
    if let Some(r) = roi {
        if !r.same_dims(pred) {
            return Err(Error::DimensionMismatch(format!(
                "roi {}x{} vs masks {}x{}",
                r.width, r.height, pred.width, pred.height
            )));
        }
    }
    let mut c = ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 0 };
    for i in 0..pred.bits.len() {
        if let Some(r) = roi {
            if !r.bits[i] {
                continue;
            }
        }
        match (pred.bits[i], truth.bits[i]) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Fraction of evaluated pixels classified correctly.
pub fn pixel_accuracy(c: &ConfusionCounts) -> Result<f64> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Domain("accuracy of zero evaluated pixels".into()));
    }
    Ok((c.tp + c.tn) as f64 / total as f64)
}

/// Dice coefficient with an additive epsilon guarding the empty-mask
/// case: `(2 tp + eps) / (2 tp + fp + fn + eps)`.
pub fn dice_eps(c: &ConfusionCounts, eps: f64) -> f64 {
    (2.0 * c.tp as f64 + eps) / (2.0 * c.tp as f64 + c.fp as f64 + c.fn_ as f64 + eps)
}

/// Shuffles participants with the seed and deals them round-robin into
/// `k` folds, so fold sizes differ by at most one.
pub fn kfold_split(participants: &[u32], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 || participants.len() < k {
        return Err(Error::TooFewGroups { needed: k.max(2), got: participants.len() });
    }
    let mut sorted: Vec<u32> = participants.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() < k {
        return Err(Error::TooFewGroups { needed: k, got: sorted.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let assignment = sorted
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, (i % k) as u8))
        .collect();
    Ok(FoldSplit { k, assignment })
}

/// One row of an aggregate table: group label, count, and mean/sample-SD
/// of each metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub group: String,
    pub n: usize,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub mean_dice: f64,
    pub sd_dice: f64,
    pub mean_coverage: f64,
    pub sd_coverage: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    // Welford's update: numerically stable and exact on constant input
    // (sum-then-divide is not, e.g. 3 copies of 0.1).
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let d = v - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (v - mean);
    }
    // Sample SD (n-1); a single observation reports 0.
    let sd = if values.len() < 2 { 0.0 } else { (m2 / (values.len() as f64 - 1.0)).sqrt() };
    (mean, sd)
}

/// Groups records along one dimension (`participant`, `task`,
/// `hand_side`, `time_offset_s`, or `fold`) and reports per-group mean
/// and sample SD of each metric. Rows are ordered by group key.
pub fn aggregate(records: &[MetricsRecord], group_by: &str) -> Result<Vec<AggregateRow>> {
    let key_fn: fn(&MetricsRecord) -> (u32, String) = match group_by {
        "participant" => |r| (r.participant, r.participant.to_string()),
        "task" => |r| (r.task as u32, r.task.to_string()),
        "hand_side" => |r| (r.hand_side as u32, r.hand_side.as_str().to_string()),
        "time_offset_s" => |r| (r.time_offset_s, r.time_offset_s.to_string()),
        "fold" => |r| (r.fold as u32, r.fold.to_string()),
        other => return Err(Error::UnknownDimension(other.to_string())),
    };
    aggregate_by(records, |r| key_fn(r))
}

/// Aggregation over an arbitrary `(sort_key, label)` grouping; the
/// hand-size table uses this with a participant → bucket lookup.
pub fn aggregate_by(
    records: &[MetricsRecord],
    key_fn: impl Fn(&MetricsRecord) -> (u32, String),
) -> Result<Vec<AggregateRow>> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut groups: BTreeMap<(u32, String), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(key_fn(r)).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|((_, label), rows)| {
            let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
            let dice: Vec<f64> = rows.iter().map(|r| r.dice).collect();
            let cov: Vec<f64> = rows.iter().map(|r| r.coverage_fraction).collect();
            let (mean_accuracy, sd_accuracy) = mean_sd(&acc);
            let (mean_dice, sd_dice) = mean_sd(&dice);
            let (mean_coverage, sd_coverage) = mean_sd(&cov);
            AggregateRow {
                group: label,
                n: rows.len(),
                mean_accuracy,
                sd_accuracy,
                mean_dice,
                sd_dice,
                mean_coverage,
                sd_coverage,
            }
        })
        .collect())
}

/// Mean metrics at one observation delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalPoint {
    pub time_offset_s: u32,
    pub mean_accuracy: f64,
    pub mean_dice: f64,
    pub n: usize,
}

/// The 13-point delay curve plus rank correlations of each metric
/// against time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalCurve {
    pub points: Vec<TemporalPoint>,
    pub rho_accuracy: f64,
    pub rho_dice: f64,
}

/// Averages metrics per offset and correlates the 13 means against the
/// offsets. All 13 offsets must be present; a perfectly flat curve
/// reports ρ = 0.
pub fn temporal_curve(records: &[MetricsRecord]) -> Result<TemporalCurve> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut by_t: BTreeMap<u32, Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        by_t.entry(r.time_offset_s).or_default().push(r);
    }
    let missing: Vec<u32> = TIME_OFFSETS_S.iter().copied().filter(|t| !by_t.contains_key(t)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingOffsets(missing));
    }
    let points: Vec<TemporalPoint> = TIME_OFFSETS_S
        .iter()
        .map(|&t| {
            let rows = &by_t[&t];
            let (mean_accuracy, _) = mean_sd(&rows.iter().map(|r| r.accuracy).collect::<Vec<_>>());
            let (mean_dice, _) = mean_sd(&rows.iter().map(|r| r.dice).collect::<Vec<_>>());
            TemporalPoint { time_offset_s: t, mean_accuracy, mean_dice, n: rows.len() }
        })
        .collect();
    let ts: Vec<f64> = TIME_OFFSETS_S.iter().map(|&t| t as f64).collect();
    let rho = |ys: Vec<f64>| -> Result<f64> {
        match stats::spearman(&ts, &ys) {
            Ok(r) => Ok(r.statistic),
            Err(Error::ConstantInput) => Ok(0.0),
            Err(e) => Err(e),
        }
    };
    let rho_accuracy = rho(points.iter().map(|p| p.mean_accuracy).collect())?;
    let rho_dice = rho(points.iter().map(|p| p.mean_dice).collect())?;
    Ok(TemporalCurve { points, rho_accuracy, rho_dice })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_mask(w: usize, h: usize, rng: &mut impl Rng) -> BinaryMask {
        BinaryMask::from_bits(w, h, (0..w * h).map(|_| rng.random_bool(0.5)).collect()).unwrap()
    }

    fn record(participant: u32, task: u8, t: u32, acc: f64, dice: f64, cov: f64) -> MetricsRecord {
        MetricsRecord {
            participant,
            task,
            hand_side: if task <= 15 { HandSide::Dorsal } else { HandSide::Palmar },
            time_offset_s: t,
            fold: (participant % 5) as u8,
            accuracy: acc,
            dice,
            coverage_fraction: cov,
        }
    }

    #[test]
    fn confusion_identity_and_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_mask(16, 16, &mut rng);
        let c = confusion(&m, &m, None).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert_eq!(c.total(), 256);

        let inv = BinaryMask::from_bits(16, 16, m.bits.iter().map(|&b| !b).collect()).unwrap();
        let c = confusion(&inv, &m, None).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
    }

    #[test]
    fn confusion_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pred = random_mask(32, 32, &mut rng);
        let truth = random_mask(32, 32, &mut rng);
        let roi = random_mask(32, 32, &mut rng);

        let mut oracle = ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 0 };
        for y in 0..32 {
            for x in 0..32 {
                if !roi.get(x, y) {
                    continue;
                }
                match (pred.get(x, y), truth.get(x, y)) {
                    (true, true) => oracle.tp += 1,
                    (true, false) => oracle.fp += 1,
                    (false, true) => oracle.fn_ += 1,
                    (false, false) => oracle.tn += 1,
                }
            }
        }
        assert_eq!(confusion(&pred, &truth, Some(&roi)).unwrap(), oracle);
        assert_eq!(
            confusion(&pred, &truth, None).unwrap().total(),
            1024
        );
    }

    #[test]
    fn accuracy_examples() {
        let c = ConfusionCounts { tp: 50, tn: 43, fp: 3, fn_: 4 };
        assert_abs_diff_eq!(pixel_accuracy(&c).unwrap(), 0.93);
        let perfect = ConfusionCounts { tp: 10, tn: 90, fp: 0, fn_: 0 };
        assert_eq!(pixel_accuracy(&perfect).unwrap(), 1.0);
        let wrong = ConfusionCounts { tp: 0, tn: 0, fp: 60, fn_: 40 };
        assert_eq!(pixel_accuracy(&wrong).unwrap(), 0.0);
        let empty = ConfusionCounts { tp: 0, tn: 0, fp: 0, fn_: 0 };
        assert!(pixel_accuracy(&empty).is_err());
    }

    #[test]
    fn dice_examples() {
        let empty = ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 100 };
        assert_eq!(dice_eps(&empty, DICE_EPS), 1.0);

        let c = ConfusionCounts { tp: 45, fp: 5, fn_: 10, tn: 0 };
        assert_abs_diff_eq!(dice_eps(&c, DICE_EPS), 90.001 / 105.001, epsilon = 1e-12);

        let perfect = ConfusionCounts { tp: 10, fp: 0, fn_: 0, tn: 0 };
        assert!((dice_eps(&perfect, DICE_EPS) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn metrics_invariant_under_simultaneous_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pred = random_mask(20, 10, &mut rng);
        let truth = random_mask(20, 10, &mut rng);
        let c = confusion(&pred, &truth, None).unwrap();
        let cf = confusion(&pred.flip_horizontal(), &truth.flip_horizontal(), None).unwrap();
        assert_eq!(pixel_accuracy(&c).unwrap(), pixel_accuracy(&cf).unwrap());
        assert_eq!(dice_eps(&c, DICE_EPS), dice_eps(&cf, DICE_EPS));
    }

    #[test]
    fn kfold_thirty_participants_six_each() {
        let participants: Vec<u32> = (1..=30).collect();
        let split = kfold_split(&participants, 5, 99).unwrap();
        for fold in 0..5 {
            assert_eq!(split.members(fold).len(), 6);
        }
        // Same seed reproduces the assignment; the folds partition the set.
        assert_eq!(split, kfold_split(&participants, 5, 99).unwrap());
        let mut all: Vec<u32> = (0..5).flat_map(|f| split.members(f)).collect();
        all.sort_unstable();
        assert_eq!(all, participants);
    }

    #[test]
    fn kfold_too_few_participants() {
        assert!(matches!(
            kfold_split(&[1, 2, 3], 5, 0),
            Err(Error::TooFewGroups { needed: 5, got: 3 })
        ));
    }

    #[test]
    fn aggregate_single_and_pair() {
        let one = vec![record(1, 2, 10, 0.9, 0.8, 0.5)];
        let rows = aggregate(&one, "task").unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n, 1);
        assert_eq!(rows[0].mean_accuracy, 0.9);
        assert_eq!(rows[0].sd_accuracy, 0.0);

        let two = vec![record(1, 2, 10, 0.9, 0.9, 0.5), record(2, 2, 10, 0.8, 0.8, 0.5)];
        let rows = aggregate(&two, "task").unwrap();
        assert_abs_diff_eq!(rows[0].mean_accuracy, 0.85, epsilon = 1e-12);
        assert_abs_diff_eq!(rows[0].sd_accuracy, (0.005f64).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn aggregate_thirty_tasks_thirty_rows() {
        let records: Vec<MetricsRecord> =
            (1u8..=30).map(|task| record(task as u32, task, 10, 0.9, 0.9, 0.5)).collect();
        let rows = aggregate(&records, "task").unwrap();
        assert_eq!(rows.len(), 30);
        // Numeric ordering of the task key, not lexicographic.
        assert_eq!(rows[0].group, "1");
        assert_eq!(rows[9].group, "10");
        assert_eq!(rows[29].group, "30");
    }

    #[test]
    fn aggregate_unknown_dimension() {
        let records = vec![record(1, 1, 0, 1.0, 1.0, 1.0)];
        assert!(matches!(
            aggregate(&records, "color"),
            Err(Error::UnknownDimension(d)) if d == "color"
        ));
        assert!(matches!(aggregate(&[], "task"), Err(Error::EmptyRecords)));
    }

    #[test]
    fn hand_size_buckets() {
        assert_eq!(HandSizeBucket::from_length_mm(160.0).unwrap(), HandSizeBucket::XS);
        assert_eq!(HandSizeBucket::from_length_mm(170.9).unwrap(), HandSizeBucket::XS);
        assert_eq!(HandSizeBucket::from_length_mm(171.0).unwrap(), HandSizeBucket::S);
        assert_eq!(HandSizeBucket::from_length_mm(182.0).unwrap(), HandSizeBucket::M);
        assert_eq!(HandSizeBucket::from_length_mm(192.0).unwrap(), HandSizeBucket::L);
        assert_eq!(HandSizeBucket::from_length_mm(203.9).unwrap(), HandSizeBucket::L);
        assert!(HandSizeBucket::from_length_mm(204.0).is_err());
        assert!(HandSizeBucket::from_length_mm(159.9).is_err());
    }

    #[test]
    fn temporal_flat_curve_reports_zero_rho() {
        let records: Vec<MetricsRecord> =
            TIME_OFFSETS_S.iter().map(|&t| record(1, 2, t, 0.9, 0.8, 0.5)).collect();
        let curve = temporal_curve(&records).unwrap();
        assert_eq!(curve.points.len(), 13);
        assert_eq!(curve.rho_accuracy, 0.0);
        assert_eq!(curve.rho_dice, 0.0);
    }

    #[test]
    fn temporal_decay_reports_minus_one() {
        let records: Vec<MetricsRecord> = TIME_OFFSETS_S
            .iter()
            .map(|&t| record(1, 2, t, 0.95 - t as f64 * 0.001, 0.9 - t as f64 * 0.002, 0.5))
            .collect();
        let curve = temporal_curve(&records).unwrap();
        assert_eq!(curve.rho_accuracy, -1.0);
        assert_eq!(curve.rho_dice, -1.0);
    }

    #[test]
    fn temporal_missing_offsets_listed() {
        let records: Vec<MetricsRecord> =
            [0u32, 5, 10].iter().map(|&t| record(1, 2, t, 0.9, 0.8, 0.5)).collect();
        match temporal_curve(&records) {
            Err(Error::MissingOffsets(m)) => {
                assert_eq!(m, vec![15, 20, 25, 30, 35, 40, 45, 50, 55, 60]);
            }
            other => panic!("expected MissingOffsets, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn dice_monotone_in_counts(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50) {
            let base = dice_eps(&ConfusionCounts { tp, fp, fn_, tn: 0 }, DICE_EPS);
            let more_tp = dice_eps(&ConfusionCounts { tp: tp + 1, fp, fn_, tn: 0 }, DICE_EPS);
            let more_fp = dice_eps(&ConfusionCounts { tp, fp: fp + 1, fn_, tn: 0 }, DICE_EPS);
            let more_fn = dice_eps(&ConfusionCounts { tp, fp, fn_: fn_ + 1, tn: 0 }, DICE_EPS);
            prop_assert!(more_tp >= base);
            prop_assert!(more_fp <= base);
            prop_assert!(more_fn <= base);
        }

        #[test]
        fn kfold_partitions_any_cohort(n in 5usize..40, k in 2usize..6, seed in 0u64..500) {
            prop_assume!(n >= k);
            let participants: Vec<u32> = (0..n as u32).collect();
            let split = kfold_split(&participants, k, seed).unwrap();
            let mut seen: Vec<u32> = split.assignment.keys().copied().collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, participants);
            let sizes: Vec<usize> = (0..k as u8).map(|f| split.members(f).len()).collect();
            let min = sizes.iter().min().unwrap();
            let max = sizes.iter().max().unwrap();
            prop_assert!(max - min <= 1);
        }

        #[test]
        fn aggregate_of_constant_records_is_exact(v in 0.0f64..=1.0, n in 1usize..20) {
            let records: Vec<MetricsRecord> =
                (0..n as u32).map(|p| record(p, 1, 0, v, v, v)).collect();
            let rows = aggregate(&records, "task").unwrap();
            prop_assert_eq!(rows[0].mean_accuracy, v);
            prop_assert_eq!(rows[0].mean_dice, v);
        }
    }
}
