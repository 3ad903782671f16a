//! Score-threshold calibration: census error against threshold, mistake
//! counts at preset operating points, and AP against instance count.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::confusion;
use crate::corpus::{name_key, CategoryId, Corpus, DetectionSet, Split};
use crate::error::{Error, Result};
use crate::matching::{MatchConfig, MatchMode};
use crate::metrics::{csv_string, fmt3};

pub const DEFAULT_STEP: f64 = 0.05;

/// Thresholds from 0 to 1 inclusive. When `1/step` is a whole number the
/// grid is `i/n`, which keeps values such as 0.65 exact.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("grid step {step} outside (0, 1]")));
    }
    let inv = 1.0 / step;
    let n = inv.round();
    if (inv - n).abs() < 1e-9 {
        let n = n as u64;
        return Ok((0..=n).map(|i| i as f64 / n as f64).collect());
    }
    let mut grid: Vec<f64> = (0..)
        .map(|i| i as f64 * step)
        .take_while(|t| *t < 1.0)
        .collect();
    grid.push(1.0);
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountSample {
    pub threshold: f64,
    /// Detections of the class scoring at least `threshold`.
    pub detections: u64,
    /// `|detections - ground truth|`.
    pub diff: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountDiffCurve {
    pub category: CategoryId,
    pub name: String,
    pub gt_count: u64,
    pub samples: Vec<CountSample>,
}

impl CountDiffCurve {
    /// Curve for one class from raw detection scores; no matching involved.
    pub fn from_scores(
        category: CategoryId,
        name: &str,
        scores: &[f64],
        gt_count: u64,
        grid: &[f64],
    ) -> Self {
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        let samples = grid
            .iter()
            .map(|&t| {
                let below = sorted.partition_point(|&s| s < t);
                let detections = (sorted.len() - below) as u64;
                CountSample {
                    threshold: t,
                    detections,
                    diff: detections.abs_diff(gt_count),
                }
            })
            .collect();
        CountDiffCurve {
            category,
            name: name.to_string(),
            gt_count,
            samples,
        }
    }

    pub fn min_diff(&self) -> Option<u64> {
        self.samples.iter().map(|s| s.diff).min()
    }
}

/// Curve for `class` over the images of `split`.
pub fn count_diff_curve(
    corpus: &Corpus,
    dets: &DetectionSet,
    class: CategoryId,
    step: f64,
    split: Option<Split>,
) -> Result<CountDiffCurve> {
    let name = corpus
        .categories()
        .name(class)
        .ok_or_else(|| Error::validation_with("unknown category", vec![class.to_string()]))?;
    let grid = threshold_grid(step)?;
    let mut scores = Vec::new();
    let mut gt = 0;
    for img in corpus.images_in(split) {
        gt += corpus
            .annotations_for(img.id)
            .filter(|a| a.category_id == class)
            .count() as u64;
        scores.extend(
            dets.for_image(img.id)
                .iter()
                .filter(|d| d.category_id == class)
                .map(|d| d.score),
        );
    }
    Ok(CountDiffCurve::from_scores(class, name, &scores, gt, &grid))
}

/// One curve per class of the table, in table order.
pub fn count_diff_curves(
    corpus: &Corpus,
    dets: &DetectionSet,
    step: f64,
    split: Option<Split>,
) -> Result<Vec<CountDiffCurve>> {
    corpus
        .categories()
        .ids()
        .map(|c| count_diff_curve(corpus, dets, c, step, split))
        .collect()
}

/// Threshold with the smallest count difference. When several samples share
/// the minimum, the longest run of consecutive minimal samples wins (the
/// first on equal length) and its midpoint is returned.
pub fn optimal_threshold(curve: &CountDiffCurve) -> Result<f64> {
    let min = curve
        .min_diff()
        .ok_or_else(|| Error::validation(format!("empty count-difference curve for {}", curve.name)))?;
    let s = &curve.samples;
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < s.len() {
        if s[i].diff != min {
            i += 1;
            continue;
        }
        let start = i;
        while i < s.len() && s[i].diff == min {
            i += 1;
        }
        if best.is_none_or(|(a, b)| i - start > b - a) {
            best = Some((start, i));
        }
    }
    let (a, b) = best.expect("the minimum occurs somewhere");
    Ok((s[a].threshold + s[b - 1].threshold) / 2.0)
}

/// Wide CSV: one row per threshold, one count-difference column per class.
pub fn curves_to_csv(curves: &[CountDiffCurve]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["threshold".to_string()];
    header.extend(curves.iter().map(|c| c.name.clone()));
    let _ = w.write_record(&header);
    if let Some(first) = curves.first() {
        for (i, s) in first.samples.iter().enumerate() {
            let mut row = vec![format!("{:.3}", s.threshold)];
            row.extend(curves.iter().map(|c| c.samples[i].diff.to_string()));
            let _ = w.write_record(&row);
        }
    }
    csv_string(w)
}

/// `category,gt_count,optimal_threshold,min_diff`, one row per class.
pub fn optima_to_csv(curves: &[CountDiffCurve]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(["category", "gt_count", "optimal_threshold", "min_diff"]);
    for c in curves {
        let t = optimal_threshold(c)?;
        let _ = w.write_record([
            c.name.clone(),
            c.gt_count.to_string(),
            format!("{t:.3}"),
            c.min_diff().unwrap_or(0).to_string(),
        ]);
    }
    Ok(csv_string(w))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetupKind {
    NotDetected,
    NotPresent,
    Balanced,
}

impl SetupKind {
    pub const ALL: [SetupKind; 3] = [SetupKind::NotDetected, SetupKind::NotPresent, SetupKind::Balanced];

    pub fn title(self) -> &'static str {
        match self {
            SetupKind::NotDetected => "Not-detected",
            SetupKind::NotPresent => "Not-present",
            SetupKind::Balanced => "Balanced",
        }
    }

    pub fn parse(s: &str) -> Option<SetupKind> {
        let key = name_key(s);
        SetupKind::ALL.into_iter().find(|k| name_key(k.title()) == key)
    }
}

/// A named (IoU, score) operating point for counting mistakes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MistakeSetup {
    pub kind: SetupKind,
    pub iou_threshold: f64,
    pub score_threshold: f64,
}

impl MistakeSetup {
    /// Every detection kept, any overlap accepted: exposes objects the model
    /// never finds.
    pub const NOT_DETECTED: MistakeSetup = MistakeSetup {
        kind: SetupKind::NotDetected,
        iou_threshold: 0.0,
        score_threshold: 0.0,
    };
    /// Only confident detections: exposes confident detections of nothing.
    pub const NOT_PRESENT: MistakeSetup = MistakeSetup {
        kind: SetupKind::NotPresent,
        iou_threshold: 0.5,
        score_threshold: 0.9,
    };
    pub const BALANCED: MistakeSetup = MistakeSetup {
        kind: SetupKind::Balanced,
        iou_threshold: 0.75,
        score_threshold: 0.75,
    };

    pub const PRESETS: [MistakeSetup; 3] = [Self::NOT_DETECTED, Self::NOT_PRESENT, Self::BALANCED];

    pub fn preset(kind: SetupKind) -> MistakeSetup {
        match kind {
            SetupKind::NotDetected => Self::NOT_DETECTED,
            SetupKind::NotPresent => Self::NOT_PRESENT,
            SetupKind::Balanced => Self::BALANCED,
        }
    }

    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            iou_threshold: self.iou_threshold,
            score_threshold: self.score_threshold,
            mode: MatchMode::ClassAgnostic,
            ..MatchConfig::default()
        }
    }
}

/// Off-diagonal mass of the class-agnostic extended matrix at the setup's
/// thresholds.
pub fn mistakes_count(
    corpus: &Corpus,
    dets: &DetectionSet,
    setup: &MistakeSetup,
    split: Option<Split>,
    workers: usize,
) -> Result<u64> {
    let cm = confusion::confusion_for(corpus, dets, setup.match_config(), split, workers)?;
    Ok(cm.mistakes())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MistakeRow {
    pub setup: MistakeSetup,
    pub mistakes: u64,
}

pub fn mistakes_table(
    corpus: &Corpus,
    dets: &DetectionSet,
    split: Option<Split>,
    workers: usize,
) -> Result<Vec<MistakeRow>> {
    MistakeSetup::PRESETS
        .iter()
        .map(|s| {
            Ok(MistakeRow {
                setup: *s,
                mistakes: mistakes_count(corpus, dets, s, split, workers)?,
            })
        })
        .collect()
}

/// `setup,iou_threshold,score_threshold,mistakes`.
pub fn mistakes_to_csv(rows: &[MistakeRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(["setup", "iou_threshold", "score_threshold", "mistakes"]);
    for r in rows {
        let _ = w.write_record([
            r.setup.kind.title().to_string(),
            r.setup.iou_threshold.to_string(),
            r.setup.score_threshold.to_string(),
            r.mistakes.to_string(),
        ]);
    }
    csv_string(w)
}

/// Read stored mistake counts. Each row must name one of the presets and
/// carry its thresholds.
pub fn mistakes_from_csv(text: &str) -> Result<Vec<MistakeRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut problems = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let field = |k: usize| record.get(k).unwrap_or_default();
        let Some(kind) = SetupKind::parse(field(0)) else {
            problems.push(format!("line {line}: unknown setup {:?}", field(0)));
            continue;
        };
        let setup = MistakeSetup::preset(kind);
        let nums = (field(1).parse::<f64>(), field(2).parse::<f64>(), field(3).parse::<u64>());
        match nums {
            (Ok(iou), Ok(score), Ok(mistakes))
                if iou == setup.iou_threshold && score == setup.score_threshold =>
            {
                rows.push(MistakeRow { setup, mistakes })
            }
            _ => problems.push(format!("line {line}: thresholds or count do not fit {}", kind.title())),
        }
    }
    if !problems.is_empty() {
        return Err(Error::validation_with("invalid mistakes table", problems));
    }
    Ok(rows)
}

pub fn read_mistakes(path: &Path) -> Result<Vec<MistakeRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    mistakes_from_csv(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub name: String,
    pub ap: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    /// AP gained per tenfold increase in count.
    pub slope: f64,
    pub intercept: f64,
    /// Fitted AP at a count of 1000.
    pub predicted_at_1000: f64,
    pub included: Vec<String>,
    pub excluded: Vec<String>,
}

impl TrendFit {
    pub fn predict(&self, count: f64) -> f64 {
        self.intercept + self.slope * count.log10()
    }
}

/// Least-squares line of AP on log10(count) over the points whose name is not
/// in `outliers`.
pub fn trend_fit(points: &[TrendPoint], outliers: &[String]) -> Result<TrendFit> {
    if let Some(p) = points.iter().find(|p| p.count == 0) {
        return Err(Error::validation_with("trend counts must be positive", vec![p.name.clone()]));
    }
    let outlier_keys: Vec<String> = outliers.iter().map(|o| name_key(o)).collect();
    let (excluded, included): (Vec<&TrendPoint>, Vec<&TrendPoint>) = points
        .iter()
        .partition(|p| outlier_keys.contains(&name_key(&p.name)));
    if included.len() < 2 {
        return Err(Error::validation(format!(
            "trend fit needs at least 2 points, {} left after removing outliers",
            included.len()
        )));
    }
    let n = included.len() as f64;
    let xs: Vec<f64> = included.iter().map(|p| (p.count as f64).log10()).collect();
    let mean_x = xs.iter().sum::<f64>() / n;
    // AP is taken relative to the first point so equal APs give a slope of
    // exactly 0
    let y0 = included[0].ap;
    let dys: Vec<f64> = included.iter().map(|p| p.ap - y0).collect();
    let mean_dy = dys.iter().sum::<f64>() / n;
    let mean_y = y0 + mean_dy;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&dys)
        .map(|(x, dy)| (x - mean_x) * (dy - mean_dy))
        .sum();
    if sxx == 0.0 {
        return Err(Error::validation("trend fit needs at least two distinct counts"));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    Ok(TrendFit {
        slope,
        intercept,
        predicted_at_1000: intercept + slope * 3.0,
        included: included.iter().map(|p| p.name.clone()).collect(),
        excluded: excluded.iter().map(|p| p.name.clone()).collect(),
    })
}

/// Read `category,count` rows, with an optional `ap75` column.
pub fn trend_points_from_csv(text: &str) -> Result<Vec<(String, u64, Option<f64>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(cat), Some(count)) = (col("category"), col("count")) else {
        return Err(Error::validation("counts file needs `category` and `count` columns"));
    };
    let ap = col("ap75");
    let mut out = Vec::new();
    let mut problems = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let name = record.get(cat).unwrap_or_default().to_string();
        let n = record.get(count).unwrap_or_default().parse::<u64>();
        let a = match ap.and_then(|c| record.get(c)).filter(|s| !s.is_empty()) {
            None => Ok(None),
            Some(s) => s.parse::<f64>().map(Some),
        };
        match (n, a) {
            (Ok(n), Ok(a)) => out.push((name, n, a)),
            _ => problems.push(format!("line {}: {name}", i + 2)),
        }
    }
    if !problems.is_empty() {
        return Err(Error::validation_with("invalid counts file", problems));
    }
    Ok(out)
}

/// AP-vs-count listing, largest count first (name breaks ties).
pub fn trend_listing_csv(points: &[TrendPoint], fit: &TrendFit) -> String {
    let mut sorted: Vec<&TrendPoint> = points.iter().collect();
    sorted.sort_by(|a, b| b.count.cmp(&a.count).then(a.name.cmp(&b.name)));
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(["category", "ap75", "count", "role"]);
    for p in sorted {
        let role = if fit.excluded.contains(&p.name) { "outlier" } else { "included" };
        let _ = w.write_record([p.name.clone(), fmt3(Some(p.ap)), p.count.to_string(), role.into()]);
    }
    csv_string(w)
}

pub fn trend_fit_csv(fit: &TrendFit) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(["quantity", "value"]);
    let _ = w.write_record(["slope".to_string(), format!("{:.3}", fit.slope)]);
    let _ = w.write_record(["intercept".to_string(), format!("{:.3}", fit.intercept)]);
    let _ = w.write_record(["predicted_ap_at_1000".to_string(), format!("{:.3}", fit.predicted_at_1000)]);
    let _ = w.write_record(["excluded".to_string(), fit.excluded.join(";")]);
    csv_string(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(scores: &[f64], gt: u64) -> CountDiffCurve {
        CountDiffCurve::from_scores(1, "c", scores, gt, &threshold_grid(DEFAULT_STEP).unwrap())
    }

    fn diff_at(c: &CountDiffCurve, t: f64) -> u64 {
        c.samples.iter().find(|s| s.threshold == t).unwrap().diff
    }

    #[test]
    fn grid_is_exact() {
        let g = threshold_grid(0.05).unwrap();
        assert_eq!(g.len(), 21);
        assert_eq!((g[0], g[13], g[20]), (0.0, 0.65, 1.0));
        assert_eq!(threshold_grid(0.3).unwrap(), vec![0.0, 0.3, 0.6, 0.8999999999999999, 1.0]);
        assert!(threshold_grid(0.0).is_err());
    }

    #[test]
    fn census_curves() {
        let perfect = curve(&[1.0, 1.0], 2);
        assert!(perfect.samples.iter().all(|s| s.diff == 0));
        let none = curve(&[], 5);
        assert!(none.samples.iter().all(|s| s.diff == 5));
        // 3 gt; at each threshold count the scores at or above it
        let c = curve(&[0.9, 0.7, 0.6, 0.2], 3);
        assert_eq!(diff_at(&c, 0.1), 1);
        assert_eq!(diff_at(&c, 0.65), 1);
        assert_eq!(diff_at(&c, 0.8), 2);
        assert_eq!(diff_at(&c, 0.95), 3);
        assert!(c.samples.windows(2).all(|w| w[0].detections >= w[1].detections));
    }

    #[test]
    fn optimum() {
        assert_eq!(optimal_threshold(&curve(&[1.0], 1)).unwrap(), 0.5);
        // one detection per score step above the gt count: unique minimum
        let mut c = curve(&[], 0);
        for (i, s) in c.samples.iter_mut().enumerate() {
            s.diff = (i as i64 - 14).unsigned_abs();
        }
        assert_eq!(optimal_threshold(&c).unwrap(), 0.7);
        c.samples.clear();
        assert!(optimal_threshold(&c).is_err());
    }

    #[test]
    fn presets() {
        let t: Vec<(f64, f64)> = MistakeSetup::PRESETS
            .iter()
            .map(|s| (s.iou_threshold, s.score_threshold))
            .collect();
        assert_eq!(t, vec![(0.0, 0.0), (0.5, 0.9), (0.75, 0.75)]);
        let rows = vec![
            MistakeRow { setup: MistakeSetup::NOT_DETECTED, mistakes: 3 },
            MistakeRow { setup: MistakeSetup::BALANCED, mistakes: 1 },
        ];
        let csv = mistakes_to_csv(&rows);
        assert_eq!(
            csv,
            "setup,iou_threshold,score_threshold,mistakes\nNot-detected,0,0,3\nBalanced,0.75,0.75,1\n"
        );
        assert_eq!(mistakes_from_csv(&csv).unwrap(), rows);
        assert!(mistakes_from_csv("setup,iou,score,m\nBalanced,0.5,0.75,1\n").is_err());
    }

    fn pt(name: &str, ap: f64, count: u64) -> TrendPoint {
        TrendPoint { name: name.into(), ap, count }
    }

    #[test]
    fn trend_basics() {
        let fit = trend_fit(&[pt("a", 0.2, 10), pt("b", 0.6, 1000)], &[]).unwrap();
        assert!((fit.slope - 0.2).abs() < 1e-12);
        assert!((fit.predict(10.0) - 0.2).abs() < 1e-12);
        assert!((fit.predicted_at_1000 - 0.6).abs() < 1e-12);
        let flat = trend_fit(&[pt("a", 0.4, 10), pt("b", 0.4, 50), pt("c", 0.4, 900)], &[]).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert!(trend_fit(&[pt("a", 0.4, 10), pt("b", 0.4, 50)], &["B".into()]).is_err());
        assert!(trend_fit(&[pt("a", 0.4, 0), pt("b", 0.4, 50)], &[]).is_err());
    }
}
