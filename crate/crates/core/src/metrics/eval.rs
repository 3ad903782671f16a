use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::curve::{average_precision, pr_curve, FlagList, PRCurve};
use super::summary::{ClassMetrics, EvalSummary};
use crate::corpus::{CategoryId, CategoryTable, Corpus, DetectionSet, ImageId, Split};
use crate::engine;
use crate::error::{Error, Result};
use crate::matching::{MatchMode, MatchOutcome, PreparedImage, DEFAULT_MAX_DETECTIONS};

/// The ten IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Positions of 0.50 and 0.75 in [`iou_thresholds`].
pub const IOU_50: usize = 0;
pub const IOU_75: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Images to evaluate; all when `None`.
    pub split: Option<Split>,
    pub score_threshold: f64,
    pub max_detections: Option<usize>,
    /// Worker threads; 0 picks one per core.
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: None,
            score_threshold: 0.0,
            max_detections: Some(DEFAULT_MAX_DETECTIONS),
            workers: 0,
        }
    }
}

/// Classwise match outcomes of every evaluated image at each standard IoU
/// threshold.
#[derive(Debug, Clone)]
pub struct Evaluation {
    categories: CategoryTable,
    thresholds: [f64; 10],
    /// (image id, outcome per threshold), ascending image id.
    images: Vec<(ImageId, Vec<MatchOutcome>)>,
    /// Per class, one flag list per threshold.
    flags: BTreeMap<CategoryId, Vec<FlagList>>,
}

pub fn evaluate(corpus: &Corpus, dets: &DetectionSet, cfg: &EvalConfig) -> Result<Evaluation> {
    if !(0.0..=1.0).contains(&cfg.score_threshold) {
        return Err(Error::Config(format!(
            "score threshold {} outside [0, 1]",
            cfg.score_threshold
        )));
    }
    let thresholds = iou_thresholds();
    let images = engine::map_images(corpus, dets, cfg.split, cfg.workers, |view| {
        let prepared = PreparedImage::new(
            &view.gts,
            &view.dets,
            MatchMode::Classwise,
            cfg.score_threshold,
            cfg.max_detections,
        )?;
        let outcomes = thresholds.iter().map(|&t| prepared.match_at(t)).collect();
        Ok((view.image.id, outcomes))
    })?;
    Ok(Evaluation::from_outcomes(corpus.categories().clone(), images))
}

impl Evaluation {
    fn from_outcomes(categories: CategoryTable, images: Vec<(ImageId, Vec<MatchOutcome>)>) -> Self {
        let thresholds = iou_thresholds();
        let flags = categories
            .ids()
            .map(|c| {
                let lists = (0..thresholds.len())
                    .map(|t| FlagList::from_outcomes(images.iter().map(|(id, o)| (*id, &o[t])), c))
                    .collect();
                (c, lists)
            })
            .collect();
        Evaluation {
            categories,
            thresholds,
            images,
            flags,
        }
    }

    pub fn categories(&self) -> &CategoryTable {
        &self.categories
    }

    pub fn thresholds(&self) -> &[f64; 10] {
        &self.thresholds
    }

    pub fn threshold_index(&self, iou: f64) -> Result<usize> {
        self.thresholds
            .iter()
            .position(|&t| (t - iou).abs() < 1e-9)
            .ok_or_else(|| Error::Config(format!("IoU {iou} is not an evaluated threshold")))
    }

    /// Outcomes of every image at threshold position `t`, by image id.
    pub fn outcomes_at(&self, t: usize) -> impl Iterator<Item = (ImageId, &MatchOutcome)> {
        self.images.iter().map(move |(id, o)| (*id, &o[t]))
    }

    fn lists(&self, class: CategoryId) -> Result<&[FlagList]> {
        self.flags
            .get(&class)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::validation_with("unknown category", vec![class.to_string()]))
    }

    pub fn flags(&self, class: CategoryId, t: usize) -> Result<&FlagList> {
        self.lists(class)?
            .get(t)
            .ok_or_else(|| Error::Config(format!("no IoU threshold at position {t}")))
    }

    pub fn gt_total(&self, class: CategoryId) -> Result<u64> {
        Ok(self.lists(class)?[0].gt_total())
    }

    pub fn ap(&self, class: CategoryId, t: usize) -> Result<Option<f64>> {
        Ok(average_precision(self.flags(class, t)?))
    }

    /// Mean AP over the ten thresholds.
    pub fn ap_range(&self, class: CategoryId) -> Result<Option<f64>> {
        Ok(mean_defined(self.lists(class)?.iter().map(average_precision)))
    }

    /// Mean recall over the ten thresholds.
    pub fn ar(&self, class: CategoryId) -> Result<Option<f64>> {
        Ok(mean_defined(self.lists(class)?.iter().map(FlagList::recall)))
    }

    pub fn pr_curve(&self, class: CategoryId, t: usize) -> Result<PRCurve> {
        Ok(pr_curve(self.flags(class, t)?))
    }

    pub fn class_metrics(&self, class: CategoryId) -> Result<ClassMetrics> {
        Ok(ClassMetrics {
            category: class,
            name: self.categories.name(class).unwrap_or_default().to_string(),
            ap: self.ap_range(class)?,
            ap50: self.ap(class, IOU_50)?,
            ap75: self.ap(class, IOU_75)?,
            ar: self.ar(class)?,
        })
    }

    pub fn summary(&self, label: &str) -> EvalSummary {
        let classes = self
            .categories
            .ids()
            .map(|c| self.class_metrics(c).expect("ids come from the table"))
            .collect();
        EvalSummary::new(label, classes)
    }
}

/// All-or-nothing mean: every value is defined together (they share a ground
/// truth total), so one `None` makes the mean `None`.
fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v?;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}
