//! Imbalance-aware evaluation: confusion counts, precision/recall/F1,
//! rank-based AUC, and the tile-wise F1 consistency distribution.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::grid::ProbabilityMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

/// Pixel-wise confusion counts at a decision threshold: oil iff
/// `p >= threshold`. Padded pixels are excluded when a pad mask is given.
pub fn confusion(
    pred: &ProbabilityMap,
    truth: &[u8],
    threshold: f64,
    pad_mask: Option<&[u8]>,
) -> Result<ConfusionCounts> {
    if pred.probs.len() != truth.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "prediction has {} pixels, truth has {}",
            pred.probs.len(),
            truth.len()
        )));
    }
    if let Some(m) = pad_mask {
        if m.len() != truth.len() {
            return Err(CoreError::DimensionMismatch("pad mask length".into()));
        }
    }
    let mut c = ConfusionCounts::default();
    for (i, (&p, &y)) in pred.probs.iter().zip(truth).enumerate() {
        if pad_mask.is_some_and(|m| m[i] == 1) {
            continue;
        }
        let oil = p as f64 >= threshold;
        match (oil, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn precision(c: &ConfusionCounts) -> f64 {
    if c.tp + c.fp == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    }
}

pub fn recall(c: &ConfusionCounts) -> f64 {
    if c.tp + c.fn_ == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    }
}

pub fn f1(c: &ConfusionCounts) -> f64 {
    let p = precision(c);
    let r = recall(c);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn accuracy(c: &ConfusionCounts) -> f64 {
    let total = c.total();
    if total == 0 {
        0.0
    } else {
        (c.tp + c.tn) as f64 / total as f64
    }
}

/// Rank-based (Mann-Whitney) AUC with midranks for ties:
/// `AUC = (R+ - n+(n+ + 1)/2) / (n+ * n-)`.
///
/// Equal to the probability that a random positive outranks a random
/// negative, ties counting one half.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CoreError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Midrank of the tie group spanning 1-based ranks i+1..=j.
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let auc = (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64);
    Ok(auc)
}

/// Full metric row at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub threshold: f64,
    pub pixel_count: u64,
}

/// Pools per-tile predictions into one pixel-wise report.
pub fn evaluate_tiles(
    preds: &[ProbabilityMap],
    truths: &[Vec<u8>],
    pad_masks: &[Vec<u8>],
    threshold: f64,
) -> Result<MetricsReport> {
    if preds.len() != truths.len() || preds.len() != pad_masks.len() {
        return Err(CoreError::DimensionMismatch("tile list lengths differ".into()));
    }
    let mut pooled = ConfusionCounts::default();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for ((pred, truth), mask) in preds.iter().zip(truths).zip(pad_masks) {
        pooled.merge(&confusion(pred, truth, threshold, Some(mask))?);
        for (i, (&p, &y)) in pred.probs.iter().zip(truth.iter()).enumerate() {
            if mask[i] == 1 {
                continue;
            }
            scores.push(p as f64);
            labels.push(y);
        }
    }
    let auc = auc_roc(&scores, &labels)?;
    Ok(MetricsReport {
        accuracy: accuracy(&pooled),
        precision: precision(&pooled),
        recall: recall(&pooled),
        f1: f1(&pooled),
        auc,
        threshold,
        pixel_count: pooled.total(),
    })
}

pub const F1_HIST_BINS: usize = 20;
pub const F1_CONSISTENCY_THRESHOLD: f64 = 0.7;

/// Tile-wise F1 distribution for consistency analysis. Tiles without any
/// ground-truth oil are excluded (F1 is undefined without positives).
#[derive(Debug, Clone, PartialEq)]
pub struct TileF1Distribution {
    /// (tile_id, f1) for included tiles.
    pub per_tile_f1: Vec<(u64, f64)>,
    /// Fixed [0,1] histogram with bin width 0.05; f1 = 1.0 lands in the
    /// last bin.
    pub histogram: [u64; F1_HIST_BINS],
    /// Share of included tiles with f1 < 0.7; None when no tile qualifies.
    pub fraction_below: Option<f64>,
}

pub fn tile_f1_distribution(
    tile_ids: &[u64],
    preds: &[ProbabilityMap],
    truths: &[Vec<u8>],
    pad_masks: &[Vec<u8>],
    threshold: f64,
) -> Result<TileF1Distribution> {
    if preds.len() != truths.len() || preds.len() != tile_ids.len() || preds.len() != pad_masks.len()
    {
        return Err(CoreError::DimensionMismatch("tile list lengths differ".into()));
    }
    let mut per_tile_f1 = Vec::new();
    let mut histogram = [0u64; F1_HIST_BINS];
    let mut below = 0u64;
    for (((&id, pred), truth), mask) in tile_ids.iter().zip(preds).zip(truths).zip(pad_masks) {
        let has_oil = truth
            .iter()
            .zip(mask.iter())
            .any(|(&y, &m)| y == 1 && m == 0);
        if !has_oil {
            continue;
        }
        let c = confusion(pred, truth, threshold, Some(mask))?;
        let score = f1(&c);
        per_tile_f1.push((id, score));
        let bin = ((score / 0.05) as usize).min(F1_HIST_BINS - 1);
        histogram[bin] += 1;
        if score < F1_CONSISTENCY_THRESHOLD {
            below += 1;
        }
    }
    let fraction_below = if per_tile_f1.is_empty() {
        None
    } else {
        Some(below as f64 / per_tile_f1.len() as f64)
    };
    Ok(TileF1Distribution {
        per_tile_f1,
        histogram,
        fraction_below,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn map(vals: &[f32]) -> ProbabilityMap {
        ProbabilityMap::new(1, vals.len(), vals.to_vec()).unwrap()
    }

    #[test]
    fn confusion_all_correct_positive() {
        let pred = map(&[1.0, 1.0, 1.0]);
        let c = confusion(&pred, &[1, 1, 1], 0.5, None).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (3, 0, 0, 0));
    }

    #[test]
    fn confusion_all_missed() {
        let pred = map(&[0.0, 0.0]);
        let c = confusion(&pred, &[1, 1], 0.5, None).unwrap();
        assert_eq!(c.fn_, 2);
    }

    #[test]
    fn confusion_hand_counted_3x3() {
        let pred = ProbabilityMap::new(
            3,
            3,
            vec![0.9, 0.2, 0.6, 0.4, 0.8, 0.1, 0.55, 0.45, 0.7],
        )
        .unwrap();
        let truth = vec![1, 0, 0, 1, 1, 0, 1, 1, 0];
        let c = confusion(&pred, &truth, 0.5, None).unwrap();
        // >=0.5 at positions 0,2,4,6,8; truth 1 at 0,3,4,6,7.
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (3, 2, 2, 2));
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        let pred = map(&[0.5]);
        let c = confusion(&pred, &[1], 0.5, None).unwrap();
        assert_eq!(c.tp, 1);
    }

    #[test]
    fn confusion_excludes_padded() {
        let pred = map(&[0.9, 0.9]);
        let c = confusion(&pred, &[1, 0], 0.5, Some(&[0, 1])).unwrap();
        assert_eq!((c.tp, c.fp), (1, 0));
    }

    #[test]
    fn threshold_monotone_in_tp_fp() {
        let pred = map(&[0.1, 0.3, 0.5, 0.7, 0.9]);
        let truth = [1, 0, 1, 0, 1];
        let mut prev_tp = u64::MAX;
        let mut prev_fp = u64::MAX;
        for t in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
            let c = confusion(&pred, &truth, t, None).unwrap();
            assert!(c.tp <= prev_tp && c.fp <= prev_fp);
            prev_tp = c.tp;
            prev_fp = c.fp;
        }
    }

    #[test]
    fn perfect_scores() {
        let c = ConfusionCounts {
            tp: 1,
            fp: 0,
            tn: 0,
            fn_: 0,
        };
        assert_eq!(precision(&c), 1.0);
        assert_eq!(recall(&c), 1.0);
        assert_eq!(f1(&c), 1.0);
    }

    #[test]
    fn degenerate_conventions() {
        let c = ConfusionCounts {
            tp: 0,
            fp: 0,
            tn: 0,
            fn_: 5,
        };
        assert_eq!(recall(&c), 0.0);
        assert_eq!(precision(&c), 0.0);
        assert_eq!(f1(&c), 0.0);
    }

    #[test]
    fn f1_hand_arithmetic() {
        let c = ConfusionCounts {
            tp: 3,
            fp: 1,
            tn: 0,
            fn_: 2,
        };
        assert!((precision(&c) - 0.75).abs() < 1e-12);
        assert!((recall(&c) - 0.6).abs() < 1e-12);
        assert!((f1(&c) - 2.0 / 3.0).abs() < 1e-12);
        // Algebraic identity: f1 = 2 tp / (2 tp + fp + fn).
        let alt = 2.0 * c.tp as f64 / (2.0 * c.tp as f64 + c.fp as f64 + c.fn_ as f64);
        assert!((f1(&c) - alt).abs() < 1e-12);
    }

    #[test]
    fn auc_textbook_case() {
        let auc = auc_roc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert_eq!(auc, 0.75);
    }

    #[test]
    fn auc_perfect_separation() {
        let auc = auc_roc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn auc_all_tied_is_half() {
        let auc = auc_roc(&[0.5, 0.5, 0.5, 0.5], &[0, 1, 0, 1]).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn auc_single_class_errors() {
        assert!(matches!(
            auc_roc(&[0.1, 0.2], &[1, 1]),
            Err(CoreError::SingleClass)
        ));
    }

    /// Brute-force pair-ordering oracle: wins + half-ties over all
    /// (positive, negative) pairs.
    pub fn auc_bruteforce(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if li != 1 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj != 0 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_matches_bruteforce_with_ties() {
        use crate::rng::Rng;
        let mut rng = Rng::from_seed(17);
        for case in 0..50 {
            let n = 5 + (case % 40);
            // Coarse quantization forces heavy ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.next_below(5) as f64 / 4.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.next_below(2) as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            let fast = auc_roc(&scores, &labels).unwrap();
            let slow = auc_bruteforce(&scores, &labels);
            assert!((fast - slow).abs() < 1e-12, "case {case}: {fast} vs {slow}");
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        use crate::rng::Rng;
        let mut rng = Rng::from_seed(23);
        let scores: Vec<f64> = (0..60).map(|_| rng.next_f64()).collect();
        let mut labels: Vec<u8> = (0..60).map(|_| rng.next_below(2) as u8).collect();
        labels[0] = 0;
        labels[1] = 1;
        let base = auc_roc(&scores, &labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|&s| libm::exp(3.0 * s) - 1.0).collect();
        let t = auc_roc(&transformed, &labels).unwrap();
        assert!((base - t).abs() < 1e-12);
    }

    #[test]
    fn tile_distribution_counts_below() {
        // Four included tiles with F1 values 1.0, 1.0, 0.0, 0.0 by
        // construction; two water-only tiles excluded.
        let n = 4;
        let ids: Vec<u64> = (0..6).collect();
        let mut preds = Vec::new();
        let mut truths = Vec::new();
        let mut masks = Vec::new();
        for i in 0..6u64 {
            let truth = if i < n {
                vec![1u8, 1, 0, 0]
            } else {
                vec![0u8, 0, 0, 0]
            };
            let pred = if i % 2 == 0 {
                map(&[1.0, 1.0, 0.0, 0.0]) // perfect
            } else {
                map(&[0.0, 0.0, 1.0, 1.0]) // inverted
            };
            preds.push(pred);
            truths.push(truth);
            masks.push(vec![0u8; 4]);
        }
        let dist = tile_f1_distribution(&ids, &preds, &truths, &masks, 0.5).unwrap();
        assert_eq!(dist.per_tile_f1.len(), 4);
        assert_eq!(dist.fraction_below, Some(0.5));
        assert_eq!(dist.histogram[19], 2);
        assert_eq!(dist.histogram[0], 2);
        assert_eq!(dist.histogram.iter().sum::<u64>(), 4);
    }

    #[test]
    fn tile_distribution_empty_when_no_oil() {
        let dist = tile_f1_distribution(
            &[0],
            &[map(&[0.0, 0.0])],
            &[vec![0, 0]],
            &[vec![0, 0]],
            0.5,
        )
        .unwrap();
        assert!(dist.per_tile_f1.is_empty());
        assert_eq!(dist.fraction_below, None);
    }

    #[test]
    fn accuracy_exact() {
        let c = ConfusionCounts {
            tp: 2,
            fp: 1,
            tn: 5,
            fn_: 2,
        };
        assert_eq!(accuracy(&c), 0.7);
    }
}
