//! Scalar detection metrics, precision-recall curves, interpolated AP and AR.

mod curve;
mod eval;
mod summary;

pub use curve::{average_precision, pr_curve, CurveFlag, FlagList, PRCurve, PrPoint, ScoredFlag};
pub use eval::{evaluate, iou_thresholds, EvalConfig, Evaluation, IOU_50, IOU_75};
pub(crate) use summary::{csv_string, fmt3};
pub use summary::{
    macro_average, render_csv, render_json, ClassMetrics, EvalSummary, GlobalMetrics, Metric,
};

use serde::{Deserialize, Serialize};

use crate::corpus::{CategoryId, CategoryTable};
use crate::error::{Error, Result};
use crate::matching::MatchOutcome;

/// Confusion counts for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

/// A quotient that reports 0 instead of NaN when the denominator is 0, and
/// says so.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub degenerate: bool,
}

impl Ratio {
    pub fn of(num: u64, den: u64) -> Ratio {
        if den == 0 {
            Ratio {
                value: 0.0,
                degenerate: true,
            }
        } else {
            Ratio {
                value: num as f64 / den as f64,
                degenerate: false,
            }
        }
    }
}

pub fn precision(c: &Counts) -> Ratio {
    Ratio::of(c.tp, c.tp + c.fp)
}

pub fn recall(c: &Counts) -> Ratio {
    Ratio::of(c.tp, c.tp + c.fn_)
}

pub fn specificity(c: &Counts) -> Ratio {
    Ratio::of(c.tn, c.tn + c.fp)
}

pub fn accuracy(c: &Counts) -> Ratio {
    Ratio::of(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn_)
}

/// One-vs-rest counts for class `class` over every event in `outcomes`.
///
/// A pair counts as TP when both sides are `class`, FP when only the
/// prediction is, FN when only the truth is, TN otherwise. Unmatched
/// detections of `class` are FP and unmatched ground truth of `class` is FN;
/// unmatched records of other classes are TN.
pub fn counts_for_class<'a>(
    outcomes: impl IntoIterator<Item = &'a MatchOutcome>,
    class: CategoryId,
    table: &CategoryTable,
) -> Result<Counts> {
    if !table.contains(class) {
        return Err(Error::validation_with(
            "unknown category",
            vec![class.to_string()],
        ));
    }
    let mut c = Counts::default();
    for o in outcomes {
        for p in &o.pairs {
            match (p.det_category == class, p.gt_category == class) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        for d in &o.not_present {
            if d.category == class {
                c.fp += 1;
            } else {
                c.tn += 1;
            }
        }
        for g in &o.not_detected {
            if g.category == class {
                c.fn_ += 1;
            } else {
                c.tn += 1;
            }
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::{DetRef, GtRef, MatchMode, MatchPair};

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Counts {
        Counts { tp, fp, fn_, tn }
    }

    #[test]
    fn scalar_ratios() {
        assert_eq!(precision(&counts(9, 1, 0, 0)).value, 0.9);
        let p = precision(&counts(0, 0, 0, 0));
        assert_eq!((p.value, p.degenerate), (0.0, true));
        assert_eq!(recall(&counts(3, 0, 1, 0)).value, 0.75);
        assert_eq!(specificity(&counts(0, 0, 0, 0)).value, 0.0);
        assert_eq!(accuracy(&counts(5, 0, 0, 3)).value, 1.0);
    }

    fn pair(det: CategoryId, gt: CategoryId) -> MatchPair {
        MatchPair {
            det_index: 0,
            det_category: det,
            score: 0.9,
            gt_id: 1,
            gt_category: gt,
            iou: 1.0,
        }
    }

    #[test]
    fn one_vs_rest_counts() {
        let table = CategoryTable::cytology();
        let lymphoma = table.require("lymphoma").unwrap();
        let macrophage = table.require("macrophage").unwrap();
        let neutrophil = table.require("neutrophil").unwrap();
        let outcome = MatchOutcome {
            mode: MatchMode::ClassAgnostic,
            pairs: vec![pair(macrophage, lymphoma), pair(lymphoma, lymphoma)],
            not_detected: vec![GtRef {
                id: 7,
                category: neutrophil,
            }],
            not_present: vec![DetRef {
                index: 3,
                category: neutrophil,
                score: 0.4,
            }],
        };
        let l = counts_for_class([&outcome], lymphoma, &table).unwrap();
        assert_eq!(l, counts(1, 0, 1, 2));
        let m = counts_for_class([&outcome], macrophage, &table).unwrap();
        assert_eq!(m, counts(0, 1, 0, 3));
        let n = counts_for_class([&outcome], neutrophil, &table).unwrap();
        assert_eq!(n, counts(0, 1, 1, 2));
        assert!(counts_for_class([&outcome], 99, &table).is_err());
    }
}
