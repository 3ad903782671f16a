//! Greedy pairing of detections with ground-truth objects in one image.
//!
//! Detections are visited in score-descending order (insertion index breaks
//! ties). Each one takes the still-free ground truth with the highest IoU at or
//! above the threshold; equal IoUs go to the lowest annotation id. An IoU
//! threshold of 0 still demands a positive overlap.

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationId, CategoryId};
use crate::error::{Error, Result};
use crate::mask::{BBox, BinaryMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Only same-category pairs are allowed.
    Classwise,
    /// Any pair may form; category disagreement is recorded on the pair.
    ClassAgnostic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub iou_threshold: f64,
    pub score_threshold: f64,
    pub mode: MatchMode,
    /// Per-image cap applied after score filtering; `None` is unlimited.
    pub max_detections: Option<usize>,
}

pub const DEFAULT_MAX_DETECTIONS: usize = 100;

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            iou_threshold: 0.5,
            score_threshold: 0.0,
            mode: MatchMode::Classwise,
            max_detections: Some(DEFAULT_MAX_DETECTIONS),
        }
    }
}

impl MatchConfig {
    pub fn new(iou_threshold: f64, score_threshold: f64, mode: MatchMode) -> Result<Self> {
        let cfg = MatchConfig {
            iou_threshold,
            score_threshold,
            mode,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_max_detections(mut self, cap: Option<usize>) -> Self {
        self.max_detections = cap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.iou_threshold) {
            return Err(Error::Config(format!(
                "IoU threshold {} outside [0, 1]",
                self.iou_threshold
            )));
        }
        if !in_unit(self.score_threshold) {
            return Err(Error::Config(format!(
                "score threshold {} outside [0, 1]",
                self.score_threshold
            )));
        }
        if self.max_detections == Some(0) {
            return Err(Error::Config("max detections must be positive".into()));
        }
        Ok(())
    }
}

/// A ground-truth object as seen by the matcher.
#[derive(Debug, Clone, Copy)]
pub struct GtObject<'a> {
    pub id: AnnotationId,
    pub category: CategoryId,
    pub mask: &'a BinaryMask,
}

/// A scored detection as seen by the matcher. `index` is its insertion
/// position and must be unique within the image.
#[derive(Debug, Clone, Copy)]
pub struct DetObject<'a> {
    pub index: usize,
    pub category: CategoryId,
    pub score: f64,
    pub mask: &'a BinaryMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub det_index: usize,
    pub det_category: CategoryId,
    pub score: f64,
    pub gt_id: AnnotationId,
    pub gt_category: CategoryId,
    pub iou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtRef {
    pub id: AnnotationId,
    pub category: CategoryId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetRef {
    pub index: usize,
    pub category: CategoryId,
    pub score: f64,
}

/// Pairs in detection visiting order, unmatched ground truth in id order and
/// unmatched detections in visiting order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub mode: MatchMode,
    pub pairs: Vec<MatchPair>,
    pub not_detected: Vec<GtRef>,
    pub not_present: Vec<DetRef>,
}

impl MatchOutcome {
    pub fn gt_considered(&self) -> usize {
        self.pairs.len() + self.not_detected.len()
    }

    pub fn dets_considered(&self) -> usize {
        self.pairs.len() + self.not_present.len()
    }
}

/// Detections filtered, ordered and capped, with every positive-IoU candidate
/// precomputed so the greedy pass can be replayed at several IoU thresholds.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    mode: MatchMode,
    gts: Vec<GtRef>,
    dets: Vec<DetRef>,
    /// Per detection: (gt position, iou) with iou > 0, ascending gt position.
    candidates: Vec<Vec<(usize, f64)>>,
}

impl PreparedImage {
    pub fn new(
        gts: &[GtObject<'_>],
        dets: &[DetObject<'_>],
        mode: MatchMode,
        score_threshold: f64,
        max_detections: Option<usize>,
    ) -> Result<Self> {
        check_dims(gts, dets)?;

        let mut gt_order: Vec<&GtObject> = gts.iter().collect();
        gt_order.sort_by_key(|g| g.id);
        let mut det_order: Vec<&DetObject> =
            dets.iter().filter(|d| d.score >= score_threshold).collect();
        det_order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
        if let Some(cap) = max_detections {
            det_order.truncate(cap);
        }

        let gt_boxes: Vec<Option<BBox>> = gt_order.iter().map(|g| g.mask.bbox().ok()).collect();
        let mut candidates = Vec::with_capacity(det_order.len());
        for d in &det_order {
            let mut row = Vec::new();
            if let Ok(dbox) = d.mask.bbox() {
                for (pos, g) in gt_order.iter().enumerate() {
                    if mode == MatchMode::Classwise && g.category != d.category {
                        continue;
                    }
                    // disjoint boxes prove a zero mask IoU
                    match gt_boxes[pos] {
                        Some(gbox) if gbox.intersection(&dbox) > 0.0 => {}
                        _ => continue,
                    }
                    let iou = d.mask.iou(g.mask)?;
                    if iou > 0.0 {
                        row.push((pos, iou));
                    }
                }
            }
            candidates.push(row);
        }

        Ok(PreparedImage {
            mode,
            gts: gt_order
                .iter()
                .map(|g| GtRef {
                    id: g.id,
                    category: g.category,
                })
                .collect(),
            dets: det_order
                .iter()
                .map(|d| DetRef {
                    index: d.index,
                    category: d.category,
                    score: d.score,
                })
                .collect(),
            candidates,
        })
    }

    pub fn gt_count(&self) -> usize {
        self.gts.len()
    }

    pub fn gts(&self) -> &[GtRef] {
        &self.gts
    }

    /// Detections in visiting order.
    pub fn dets(&self) -> &[DetRef] {
        &self.dets
    }

    pub fn match_at(&self, iou_threshold: f64) -> MatchOutcome {
        let mut gt_taken = vec![false; self.gts.len()];
        let mut pairs = Vec::new();
        let mut not_present = Vec::new();
        for (det, cands) in self.dets.iter().zip(&self.candidates) {
            let mut best: Option<(usize, f64)> = None;
            for &(pos, iou) in cands {
                if gt_taken[pos] || iou < iou_threshold {
                    continue;
                }
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((pos, iou));
                }
            }
            match best {
                Some((pos, iou)) => {
                    gt_taken[pos] = true;
                    let gt = self.gts[pos];
                    pairs.push(MatchPair {
                        det_index: det.index,
                        det_category: det.category,
                        score: det.score,
                        gt_id: gt.id,
                        gt_category: gt.category,
                        iou,
                    });
                }
                None => not_present.push(*det),
            }
        }
        let not_detected = self
            .gts
            .iter()
            .zip(&gt_taken)
            .filter(|(_, &taken)| !taken)
            .map(|(g, _)| *g)
            .collect();
        MatchOutcome {
            mode: self.mode,
            pairs,
            not_detected,
            not_present,
        }
    }
}

fn check_dims(gts: &[GtObject<'_>], dets: &[DetObject<'_>]) -> Result<()> {
    let mut masks = gts.iter().map(|g| g.mask).chain(dets.iter().map(|d| d.mask));
    if let Some(first) = masks.next() {
        if let Some(bad) = masks.find(|m| !m.same_dims(first)) {
            return Err(Error::Geometry(format!(
                "masks in one image differ in size: {}x{} vs {}x{}",
                first.width(),
                first.height(),
                bad.width(),
                bad.height()
            )));
        }
    }
    Ok(())
}

pub fn match_image(
    gts: &[GtObject<'_>],
    dets: &[DetObject<'_>],
    cfg: &MatchConfig,
) -> Result<MatchOutcome> {
    cfg.validate()?;
    let prepared =
        PreparedImage::new(gts, dets, cfg.mode, cfg.score_threshold, cfg.max_detections)?;
    Ok(prepared.match_at(cfg.iou_threshold))
}

/// Largest scene [`match_image_oracle`] accepts, per side.
pub const ORACLE_MAX_OBJECTS: usize = 8;

/// Straight re-implementation of the greedy protocol on dense pixel grids,
/// without box pre-filtering or candidate tables. Meant for cross-checking
/// [`match_image`] on small scenes.
pub fn match_image_oracle(
    gts: &[GtObject<'_>],
    dets: &[DetObject<'_>],
    cfg: &MatchConfig,
) -> Result<MatchOutcome> {
    if gts.len() > ORACLE_MAX_OBJECTS || dets.len() > ORACLE_MAX_OBJECTS {
        return Err(Error::Size(format!(
            "oracle handles at most {ORACLE_MAX_OBJECTS} objects per side, got {} gt and {} detections",
            gts.len(),
            dets.len()
        )));
    }
    cfg.validate()?;
    check_dims(gts, dets)?;

    let dense = |m: &BinaryMask| m.decode().as_slice().to_vec();
    let gt_px: Vec<Vec<bool>> = gts.iter().map(|g| dense(g.mask)).collect();
    let det_px: Vec<Vec<bool>> = dets.iter().map(|d| dense(d.mask)).collect();
    let pixel_iou = |a: &[bool], b: &[bool]| -> f64 {
        let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
        let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    };

    // visiting order by repeated selection of the best remaining detection
    let mut remaining: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].score >= cfg.score_threshold)
        .collect();
    let mut visit = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for k in 1..remaining.len() {
            let (a, b) = (&dets[remaining[k]], &dets[remaining[best]]);
            if a.score > b.score || (a.score == b.score && a.index < b.index) {
                best = k;
            }
        }
        visit.push(remaining.remove(best));
    }
    if let Some(cap) = cfg.max_detections {
        visit.truncate(cap);
    }

    let mut taken = vec![false; gts.len()];
    let mut pairs = Vec::new();
    let mut not_present = Vec::new();
    for &di in &visit {
        let d = &dets[di];
        let mut chosen: Option<usize> = None;
        let mut chosen_iou = 0.0;
        for gi in 0..gts.len() {
            let g = &gts[gi];
            if taken[gi] {
                continue;
            }
            if cfg.mode == MatchMode::Classwise && g.category != d.category {
                continue;
            }
            let iou = pixel_iou(&det_px[di], &gt_px[gi]);
            if iou <= 0.0 || iou < cfg.iou_threshold {
                continue;
            }
            let better = match chosen {
                None => true,
                Some(ci) => iou > chosen_iou || (iou == chosen_iou && g.id < gts[ci].id),
            };
            if better {
                chosen = Some(gi);
                chosen_iou = iou;
            }
        }
        match chosen {
            Some(gi) => {
                taken[gi] = true;
                pairs.push(MatchPair {
                    det_index: d.index,
                    det_category: d.category,
                    score: d.score,
                    gt_id: gts[gi].id,
                    gt_category: gts[gi].category,
                    iou: chosen_iou,
                });
            }
            None => not_present.push(DetRef {
                index: d.index,
                category: d.category,
                score: d.score,
            }),
        }
    }
    let mut not_detected: Vec<GtRef> = (0..gts.len())
        .filter(|&gi| !taken[gi])
        .map(|gi| GtRef {
            id: gts[gi].id,
            category: gts[gi].category,
        })
        .collect();
    not_detected.sort_by_key(|g| g.id);
    Ok(MatchOutcome {
        mode: cfg.mode,
        pairs,
        not_detected,
        not_present,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> BinaryMask {
        let mut bm = crate::mask::Bitmap::new(w, h).unwrap();
        for x in x0..x1 {
            for y in y0..y1 {
                bm.set(x, y, true);
            }
        }
        BinaryMask::encode(&bm)
    }

    fn cfg(iou: f64, score: f64) -> MatchConfig {
        MatchConfig::new(iou, score, MatchMode::Classwise).unwrap()
    }

    #[test]
    fn no_detections() {
        let m = rect(10, 10, 0, 0, 2, 2);
        let gts: Vec<GtObject> = (1..=3)
            .map(|id| GtObject { id, category: 1, mask: &m })
            .collect();
        let out = match_image(&gts, &[], &cfg(0.75, 0.75)).unwrap();
        assert_eq!(out.not_detected.len(), 3);
        assert!(out.pairs.is_empty());
    }

    #[test]
    fn exact_detection_pairs_with_iou_one() {
        let m = rect(10, 10, 2, 2, 6, 6);
        let gts = [GtObject { id: 1, category: 3, mask: &m }];
        let dets = [DetObject { index: 0, category: 3, score: 0.9, mask: &m }];
        let out = match_image(&gts, &dets, &cfg(0.75, 0.75)).unwrap();
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.pairs[0].iou, 1.0);
    }

    #[test]
    fn higher_score_wins_the_shared_gt() {
        // gt 5x1 strip, each detection covers 4 of its 5 pixels: IoU 0.8
        let g = rect(5, 1, 0, 0, 5, 1);
        let a = rect(5, 1, 0, 0, 4, 1);
        let b = rect(5, 1, 1, 0, 5, 1);
        assert_eq!(a.iou(&g).unwrap(), 0.8);
        let gts = [GtObject { id: 1, category: 1, mask: &g }];
        let dets = [
            DetObject { index: 0, category: 1, score: 0.8, mask: &b },
            DetObject { index: 1, category: 1, score: 0.9, mask: &a },
        ];
        let out = match_image(&gts, &dets, &cfg(0.75, 0.0)).unwrap();
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.pairs[0].det_index, 1);
        assert_eq!(out.not_present.len(), 1);
        assert_eq!(out.not_present[0].index, 0);
    }

    #[test]
    fn equal_iou_goes_to_lowest_id() {
        let g1 = rect(4, 1, 0, 0, 2, 1);
        let g2 = rect(4, 1, 2, 0, 4, 1);
        let d = rect(4, 1, 1, 0, 3, 1);
        let gts = [
            GtObject { id: 9, category: 1, mask: &g2 },
            GtObject { id: 4, category: 1, mask: &g1 },
        ];
        let dets = [DetObject { index: 0, category: 1, score: 0.5, mask: &d }];
        let out = match_image(&gts, &dets, &cfg(0.0, 0.0)).unwrap();
        assert_eq!(out.pairs[0].gt_id, 4);
        assert_eq!(out.not_detected, vec![GtRef { id: 9, category: 1 }]);
    }

    #[test]
    fn zero_threshold_still_needs_overlap() {
        let g = rect(4, 4, 0, 0, 2, 2);
        let d = rect(4, 4, 2, 2, 4, 4);
        let gts = [GtObject { id: 1, category: 1, mask: &g }];
        let dets = [DetObject { index: 0, category: 1, score: 0.5, mask: &d }];
        let out = match_image(&gts, &dets, &cfg(0.0, 0.0)).unwrap();
        assert!(out.pairs.is_empty());
        assert_eq!((out.not_detected.len(), out.not_present.len()), (1, 1));
    }

    #[test]
    fn modes_differ_on_category() {
        let m = rect(4, 4, 0, 0, 2, 2);
        let gts = [GtObject { id: 1, category: 3, mask: &m }];
        let dets = [DetObject { index: 0, category: 4, score: 0.9, mask: &m }];
        let classwise = match_image(&gts, &dets, &cfg(0.5, 0.0)).unwrap();
        assert!(classwise.pairs.is_empty());
        let agnostic = MatchConfig::new(0.5, 0.0, MatchMode::ClassAgnostic).unwrap();
        let out = match_image(&gts, &dets, &agnostic).unwrap();
        assert_eq!(out.pairs[0].det_category, 4);
        assert_eq!(out.pairs[0].gt_category, 3);
    }

    #[test]
    fn score_threshold_and_cap() {
        let m = rect(4, 4, 0, 0, 4, 4);
        let gts: Vec<GtObject> = vec![];
        let dets: Vec<DetObject> = (0..5)
            .map(|i| DetObject { index: i, category: 1, score: i as f64 / 10.0, mask: &m })
            .collect();
        let out = match_image(&gts, &dets, &cfg(0.5, 0.2)).unwrap();
        assert_eq!(out.not_present.len(), 3);
        let capped = cfg(0.5, 0.0).with_max_detections(Some(2));
        let out = match_image(&gts, &dets, &capped).unwrap();
        let kept: Vec<usize> = out.not_present.iter().map(|d| d.index).collect();
        assert_eq!(kept, vec![4, 3]);
    }

    #[test]
    fn mismatched_dimensions() {
        let a = rect(4, 4, 0, 0, 1, 1);
        let b = rect(5, 4, 0, 0, 1, 1);
        let gts = [GtObject { id: 1, category: 1, mask: &a }];
        let dets = [DetObject { index: 0, category: 1, score: 0.5, mask: &b }];
        assert!(matches!(match_image(&gts, &dets, &cfg(0.5, 0.0)), Err(Error::Geometry(_))));
    }

    #[test]
    fn invalid_config() {
        assert!(MatchConfig::new(1.5, 0.0, MatchMode::Classwise).is_err());
        assert!(MatchConfig::new(0.5, -0.1, MatchMode::Classwise).is_err());
    }

    #[test]
    fn oracle_small_cases() {
        let empty = match_image_oracle(&[], &[], &cfg(0.5, 0.0)).unwrap();
        assert!(empty.pairs.is_empty() && empty.not_detected.is_empty() && empty.not_present.is_empty());

        let g = rect(6, 6, 0, 0, 2, 2);
        let d = rect(6, 6, 3, 3, 5, 5);
        let gts = [GtObject { id: 1, category: 1, mask: &g }];
        let dets = [DetObject { index: 0, category: 1, score: 0.9, mask: &d }];
        let out = match_image_oracle(&gts, &dets, &cfg(0.5, 0.0)).unwrap();
        assert_eq!((out.not_detected.len(), out.not_present.len()), (1, 1));

        let many: Vec<GtObject> = (0..9).map(|id| GtObject { id, category: 1, mask: &g }).collect();
        assert!(matches!(
            match_image_oracle(&many, &[], &cfg(0.5, 0.0)),
            Err(Error::Size(_))
        ));
    }
}
