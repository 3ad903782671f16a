use serde::{Deserialize, Serialize};

use crate::corpus::{CategoryId, ImageId};
use crate::matching::MatchOutcome;

/// Number of recall sample points used for interpolated AP.
const RECALL_POINTS: usize = 101;

/// One detection's verdict at a fixed IoU threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredFlag {
    pub score: f64,
    pub image_id: ImageId,
    pub index: usize,
    pub tp: bool,
}

/// Detection verdicts of one class in global score order (ties by image id,
/// then insertion index), plus the ground-truth total they are measured
/// against.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlagList {
    flags: Vec<ScoredFlag>,
    gt_total: u64,
}

impl FlagList {
    pub fn new(mut flags: Vec<ScoredFlag>, gt_total: u64) -> Self {
        flags.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.image_id.cmp(&b.image_id))
                .then(a.index.cmp(&b.index))
        });
        FlagList { flags, gt_total }
    }

    /// Verdicts for `class` drawn from per-image outcomes. Pairs whose
    /// prediction is `class` but whose truth is not count as false.
    pub fn from_outcomes<'a>(
        outcomes: impl IntoIterator<Item = (ImageId, &'a MatchOutcome)>,
        class: CategoryId,
    ) -> Self {
        let mut flags = Vec::new();
        let mut gt_total = 0;
        for (image_id, o) in outcomes {
            for p in &o.pairs {
                if p.gt_category == class {
                    gt_total += 1;
                }
                if p.det_category == class {
                    flags.push(ScoredFlag {
                        score: p.score,
                        image_id,
                        index: p.det_index,
                        tp: p.gt_category == class,
                    });
                }
            }
            for d in o.not_present.iter().filter(|d| d.category == class) {
                flags.push(ScoredFlag {
                    score: d.score,
                    image_id,
                    index: d.index,
                    tp: false,
                });
            }
            gt_total += o.not_detected.iter().filter(|g| g.category == class).count() as u64;
        }
        FlagList::new(flags, gt_total)
    }

    pub fn flags(&self) -> &[ScoredFlag] {
        &self.flags
    }

    pub fn gt_total(&self) -> u64 {
        self.gt_total
    }

    pub fn tp_count(&self) -> u64 {
        self.flags.iter().filter(|f| f.tp).count() as u64
    }

    /// Recall with every detection kept; `None` without ground truth.
    pub fn recall(&self) -> Option<f64> {
        (self.gt_total > 0).then(|| self.tp_count() as f64 / self.gt_total as f64)
    }
}

/// 101-point interpolated average precision. Precision at recall level r is
/// the best precision reached at any recall of at least r, or 0 if r is never
/// reached. `None` when there is no ground truth.
pub fn average_precision(list: &FlagList) -> Option<f64> {
    if list.gt_total == 0 {
        return None;
    }
    let n = list.flags.len();
    let mut recall = Vec::with_capacity(n);
    let mut precision = Vec::with_capacity(n);
    let (mut tp, mut fp) = (0u64, 0u64);
    for f in &list.flags {
        if f.tp {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / list.gt_total as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..n).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    let mut k = 0;
    for i in 0..RECALL_POINTS {
        let r = i as f64 / (RECALL_POINTS - 1) as f64;
        while k < n && recall[k] < r {
            k += 1;
        }
        if k < n {
            sum += precision[k];
        }
    }
    Some(sum / RECALL_POINTS as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveFlag {
    /// Recall is undefined.
    NoGroundTruth,
    /// Recall is 0 at every threshold.
    NoDetections,
}

/// Precision and recall of the detections scoring at least `threshold`, for
/// ascending thresholds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    pub points: Vec<PrPoint>,
    pub flag: Option<CurveFlag>,
}

impl PRCurve {
    pub fn recall_at(&self, threshold: f64) -> f64 {
        self.points
            .iter()
            .find(|p| p.threshold >= threshold)
            .map_or(0.0, |p| p.recall)
    }
}

/// Sampled at 0, 1 and every distinct detection score. Greedy matching visits
/// detections by score, so raising the threshold only truncates the list.
pub fn pr_curve(list: &FlagList) -> PRCurve {
    if list.gt_total == 0 {
        log::warn!("precision-recall curve requested for a class without ground truth");
        return PRCurve {
            points: Vec::new(),
            flag: Some(CurveFlag::NoGroundTruth),
        };
    }
    if list.flags.is_empty() {
        return PRCurve {
            points: Vec::new(),
            flag: Some(CurveFlag::NoDetections),
        };
    }
    let mut thresholds: Vec<f64> = list.flags.iter().map(|f| f.score).collect();
    thresholds.push(0.0);
    thresholds.push(1.0);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    // flags are score-descending; walk thresholds from the top
    let mut points = Vec::with_capacity(thresholds.len());
    let (mut kept, mut tp) = (0usize, 0u64);
    for &t in thresholds.iter().rev() {
        while kept < list.flags.len() && list.flags[kept].score >= t {
            if list.flags[kept].tp {
                tp += 1;
            }
            kept += 1;
        }
        points.push(PrPoint {
            threshold: t,
            precision: super::Ratio::of(tp, kept as u64).value,
            recall: tp as f64 / list.gt_total as f64,
        });
    }
    points.reverse();
    PRCurve { points, flag: None }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(verdicts: &[(f64, bool)], gt: u64) -> FlagList {
        let flags = verdicts
            .iter()
            .enumerate()
            .map(|(i, &(score, tp))| ScoredFlag {
                score,
                image_id: 1,
                index: i,
                tp,
            })
            .collect();
        FlagList::new(flags, gt)
    }

    #[test]
    fn perfect_and_hopeless() {
        assert_eq!(average_precision(&list(&[(0.9, true), (0.5, true)], 2)), Some(1.0));
        assert_eq!(average_precision(&list(&[(0.9, false)], 2)), Some(0.0));
        assert_eq!(average_precision(&list(&[], 3)), Some(0.0));
        assert_eq!(average_precision(&list(&[(0.9, false)], 0)), None);
    }

    #[test]
    fn envelope_on_one_gt() {
        assert_eq!(average_precision(&list(&[(0.9, true), (0.8, false)], 1)), Some(1.0));
        // precision 1/2 is reached only at recall 1; the envelope carries it
        // down to every one of the 101 recall points
        assert_eq!(average_precision(&list(&[(0.9, false), (0.8, true)], 1)), Some(0.5));
    }

    #[test]
    fn partial_recall() {
        // 1 of 2 gt found at precision 1: recall points 0.00..=0.50 score 1
        let ap = average_precision(&list(&[(0.9, true)], 2)).unwrap();
        assert_eq!(ap, 51.0 / 101.0);
    }

    #[test]
    fn curve_for_single_detection() {
        let c = pr_curve(&list(&[(0.7, true)], 1));
        let pts: Vec<(f64, f64, f64)> = c
            .points
            .iter()
            .map(|p| (p.threshold, p.precision, p.recall))
            .collect();
        assert_eq!(pts, vec![(0.0, 1.0, 1.0), (0.7, 1.0, 1.0), (1.0, 0.0, 0.0)]);
        assert_eq!(c.recall_at(0.71), 0.0);
    }

    #[test]
    fn curve_degenerate_cases() {
        assert_eq!(pr_curve(&list(&[], 2)).flag, Some(CurveFlag::NoDetections));
        assert_eq!(pr_curve(&list(&[(0.5, false)], 0)).flag, Some(CurveFlag::NoGroundTruth));
        let c = pr_curve(&list(&[(0.6, false), (0.3, false)], 2));
        assert!(c.points.iter().all(|p| p.precision == 0.0 && p.recall == 0.0));
    }
}
