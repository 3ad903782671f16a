//! Extended confusion matrices: predicted classes plus a `not-detected` row
//! against true classes plus a `not-present` column.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{CategoryId, CategoryTable, Corpus, DetectionSet, Split};
use crate::engine;
use crate::error::{Error, Result};
use crate::matching::{MatchConfig, MatchMode, MatchOutcome};
use crate::metrics::Ratio;

pub const NOT_DETECTED: &str = "not-detected";
pub const NOT_PRESENT: &str = "not-present";
const CORNER: &str = "predicted\\true";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLabel {
    pub id: CategoryId,
    pub name: String,
}

fn labels_of(table: &CategoryTable) -> Vec<ClassLabel> {
    table
        .iter()
        .map(|c| ClassLabel {
            id: c.id,
            name: c.name.clone(),
        })
        .collect()
}

/// Square grid of side K+1. Row `i < K` is predicted class `i`, row `K` is
/// not-detected; column `j < K` is true class `j`, column `K` is not-present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct ExtendedConfusionMatrix {
    pub label: String,
    pub config: MatchConfig,
    classes: Vec<ClassLabel>,
    grid: Vec<Vec<u64>>,
}

#[derive(Deserialize)]
struct RawMatrix {
    label: String,
    config: MatchConfig,
    classes: Vec<ClassLabel>,
    grid: Vec<Vec<u64>>,
}

impl TryFrom<RawMatrix> for ExtendedConfusionMatrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        let side = raw.classes.len() + 1;
        if raw.grid.len() != side || raw.grid.iter().any(|r| r.len() != side) {
            return Err(Error::validation(format!(
                "confusion grid must be {side}x{side} for {} classes",
                raw.classes.len()
            )));
        }
        if raw.grid[side - 1][side - 1] != 0 {
            return Err(Error::validation("not-detected/not-present cell must be 0"));
        }
        Ok(ExtendedConfusionMatrix {
            label: raw.label,
            config: raw.config,
            classes: raw.classes,
            grid: raw.grid,
        })
    }
}

impl ExtendedConfusionMatrix {
    pub fn empty(table: &CategoryTable, config: MatchConfig) -> Self {
        let side = table.len() + 1;
        ExtendedConfusionMatrix {
            label: String::new(),
            config,
            classes: labels_of(table),
            grid: vec![vec![0; side]; side],
        }
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    pub fn classes(&self) -> &[ClassLabel] {
        &self.classes
    }

    pub fn grid(&self) -> &[Vec<u64>] {
        &self.grid
    }

    /// Number of classes K.
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    fn position(&self, id: CategoryId) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::validation_with("unknown category", vec![id.to_string()]))
    }

    /// Cell count; `None` selects the margin row or column.
    pub fn cell(&self, predicted: Option<CategoryId>, truth: Option<CategoryId>) -> Result<u64> {
        let k = self.class_count();
        let r = predicted.map_or(Ok(k), |p| self.position(p))?;
        let c = truth.map_or(Ok(k), |t| self.position(t))?;
        Ok(self.grid[r][c])
    }

    /// Add `n` events to one cell; `None` selects the margin row or column.
    pub fn add(&mut self, predicted: Option<CategoryId>, truth: Option<CategoryId>, n: u64) -> Result<()> {
        if predicted.is_none() && truth.is_none() {
            return Err(Error::validation("the not-detected/not-present cell is always 0"));
        }
        let k = self.class_count();
        let r = predicted.map_or(Ok(k), |p| self.position(p))?;
        let c = truth.map_or(Ok(k), |t| self.position(t))?;
        self.grid[r][c] += n;
        Ok(())
    }

    /// Add one image's events. Outcomes must come from matching under this
    /// matrix's mode.
    pub fn add_outcome(&mut self, o: &MatchOutcome) -> Result<()> {
        if o.mode != self.config.mode {
            return Err(Error::Config(format!(
                "outcome matched in {:?} mode, matrix expects {:?}",
                o.mode, self.config.mode
            )));
        }
        let k = self.class_count();
        for p in &o.pairs {
            let (r, c) = (self.position(p.det_category)?, self.position(p.gt_category)?);
            self.grid[r][c] += 1;
        }
        for g in &o.not_detected {
            let c = self.position(g.category)?;
            self.grid[k][c] += 1;
        }
        for d in &o.not_present {
            let r = self.position(d.category)?;
            self.grid[r][k] += 1;
        }
        Ok(())
    }

    /// Cellwise sum; both matrices must share classes and configuration.
    pub fn merge(&mut self, other: &ExtendedConfusionMatrix) -> Result<()> {
        self.check_aligned(other)?;
        for (a, b) in self.grid.iter_mut().zip(&other.grid) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    fn check_aligned(&self, other: &ExtendedConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::Config("confusion matrices have different classes".into()));
        }
        if self.config != other.config {
            return Err(Error::Config(
                "confusion matrices were built with different matching settings".into(),
            ));
        }
        Ok(())
    }

    pub fn row_sum(&self, row: usize) -> u64 {
        self.grid[row].iter().sum()
    }

    pub fn col_sum(&self, col: usize) -> u64 {
        self.grid.iter().map(|r| r[col]).sum()
    }

    pub fn total(&self) -> u64 {
        self.grid.iter().flatten().sum()
    }

    pub fn diagonal_sum(&self) -> u64 {
        (0..self.class_count()).map(|i| self.grid[i][i]).sum()
    }

    /// Every event that is not a correct detection: confusions, not-detected
    /// and not-present.
    pub fn mistakes(&self) -> u64 {
        self.total() - self.diagonal_sum()
    }

    pub fn not_detected_total(&self) -> u64 {
        self.row_sum(self.class_count())
    }

    pub fn not_present_total(&self) -> u64 {
        self.col_sum(self.class_count())
    }

    /// Share of not-detected events whose true class is in `classes`.
    pub fn not_detected_share(&self, classes: &[CategoryId]) -> Result<Ratio> {
        let k = self.class_count();
        let mut part = 0;
        for &id in classes {
            part += self.grid[k][self.position(id)?];
        }
        Ok(Ratio::of(part, self.not_detected_total()))
    }

    /// Drop the rows and columns of `excluded`, and with them every event
    /// that involves an excluded class on either side.
    pub fn reduce_to_basic(&self, excluded: &[CategoryId]) -> Result<ExtendedConfusionMatrix> {
        let unknown: Vec<String> = excluded
            .iter()
            .filter(|id| !self.classes.iter().any(|c| c.id == **id))
            .map(|id| id.to_string())
            .collect();
        if !unknown.is_empty() {
            return Err(Error::validation_with("cannot exclude unknown categories", unknown));
        }
        let k = self.class_count();
        let keep: Vec<usize> = (0..k)
            .filter(|&i| !excluded.contains(&self.classes[i].id))
            .chain([k])
            .collect();
        Ok(ExtendedConfusionMatrix {
            label: self.label.clone(),
            config: self.config,
            classes: keep[..keep.len() - 1]
                .iter()
                .map(|&i| self.classes[i].clone())
                .collect(),
            grid: keep
                .iter()
                .map(|&r| keep.iter().map(|&c| self.grid[r][c]).collect())
                .collect(),
        })
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec![CORNER.to_string()];
        h.extend(self.classes.iter().map(|c| c.name.clone()));
        h.push(NOT_PRESENT.to_string());
        h
    }

    fn row_label(&self, r: usize) -> &str {
        self.classes.get(r).map_or(NOT_DETECTED, |c| c.name.as_str())
    }

    /// One row per predicted class plus not-detected; a matrix without
    /// classes renders as the header alone.
    pub fn to_csv(&self) -> String {
        render_grid_csv(self.header(), self.class_count(), |r| self.row_label(r).to_string(), |r, c| {
            self.grid[r][c].to_string()
        })
    }

    /// Read back a grid written by [`ExtendedConfusionMatrix::to_csv`]. Class
    /// names are resolved against `table`.
    pub fn from_csv(text: &str, table: &CategoryTable, config: MatchConfig) -> Result<Self> {
        let (classes, grid) = parse_grid_csv(text, table, |s| {
            s.parse::<u64>().map_err(|_| format!("bad count {s:?}"))
        })?;
        ExtendedConfusionMatrix::try_from(RawMatrix {
            label: String::new(),
            config,
            classes,
            grid,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("matrix serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::validation(format!("bad matrix JSON: {e}")))
    }

    /// Fixed-width table for terminals.
    pub fn to_text(&self) -> String {
        render_text(self.header(), self.class_count(), |r| self.row_label(r).to_string(), |r, c| {
            self.grid[r][c].to_string()
        })
    }
}

/// Signed cellwise difference `a - b` of two aligned matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceMatrix {
    pub label_a: String,
    pub label_b: String,
    pub classes: Vec<ClassLabel>,
    pub grid: Vec<Vec<i64>>,
}

pub fn diff(a: &ExtendedConfusionMatrix, b: &ExtendedConfusionMatrix) -> Result<DifferenceMatrix> {
    a.check_aligned(b)?;
    Ok(DifferenceMatrix {
        label_a: a.label.clone(),
        label_b: b.label.clone(),
        classes: a.classes.clone(),
        grid: a
            .grid
            .iter()
            .zip(&b.grid)
            .map(|(ra, rb)| ra.iter().zip(rb).map(|(&x, &y)| x as i64 - y as i64).collect())
            .collect(),
    })
}

impl DifferenceMatrix {
    pub fn is_zero(&self) -> bool {
        self.grid.iter().flatten().all(|&v| v == 0)
    }

    /// True when `a` gains on every diagonal cell and loses everywhere else.
    pub fn is_pure_improvement(&self) -> bool {
        let k = self.classes.len();
        self.grid.iter().enumerate().all(|(r, row)| {
            row.iter()
                .enumerate()
                .all(|(c, &v)| if r == c && r < k { v >= 0 } else { v <= 0 })
        })
    }

    pub fn negate(&self) -> DifferenceMatrix {
        DifferenceMatrix {
            label_a: self.label_b.clone(),
            label_b: self.label_a.clone(),
            classes: self.classes.clone(),
            grid: self
                .grid
                .iter()
                .map(|r| r.iter().map(|v| -v).collect())
                .collect(),
        }
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec![CORNER.to_string()];
        h.extend(self.classes.iter().map(|c| c.name.clone()));
        h.push(NOT_PRESENT.to_string());
        h
    }

    fn row_label(&self, r: usize) -> String {
        self.classes
            .get(r)
            .map_or(NOT_DETECTED.to_string(), |c| c.name.clone())
    }

    pub fn to_csv(&self) -> String {
        render_grid_csv(self.header(), self.classes.len(), |r| self.row_label(r), |r, c| {
            self.grid[r][c].to_string()
        })
    }

    pub fn from_csv(text: &str, table: &CategoryTable) -> Result<Self> {
        let (classes, grid) = parse_grid_csv(text, table, |s| {
            s.parse::<i64>().map_err(|_| format!("bad difference {s:?}"))
        })?;
        Ok(DifferenceMatrix {
            label_a: String::new(),
            label_b: String::new(),
            classes,
            grid,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("matrix serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        render_text(self.header(), self.classes.len(), |r| self.row_label(r), |r, c| {
            self.grid[r][c].to_string()
        })
    }
}

fn render_grid_csv(
    header: Vec<String>,
    k: usize,
    row_label: impl Fn(usize) -> String,
    cell: impl Fn(usize, usize) -> String,
) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(&header);
    if k > 0 {
        for r in 0..=k {
            let mut row = vec![row_label(r)];
            row.extend((0..=k).map(|c| cell(r, c)));
            let _ = w.write_record(&row);
        }
    }
    crate::metrics::csv_string(w)
}

fn parse_grid_csv<T: Default + Clone>(
    text: &str,
    table: &CategoryTable,
    parse: impl Fn(&str) -> std::result::Result<T, String>,
) -> Result<(Vec<ClassLabel>, Vec<Vec<T>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 || header.last().map(String::as_str) != Some(NOT_PRESENT) {
        return Err(Error::validation(format!(
            "confusion CSV header must end with `{NOT_PRESENT}`"
        )));
    }
    let mut classes = Vec::new();
    for name in &header[1..header.len() - 1] {
        let id = table
            .resolve(name)
            .ok_or_else(|| Error::validation_with("unknown category in header", vec![name.clone()]))?;
        classes.push(ClassLabel {
            id,
            name: name.clone(),
        });
    }
    let k = classes.len();
    let mut grid = vec![vec![T::default(); k + 1]; k + 1];
    let mut rows = 0;
    let mut problems = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let expected = if r < k { classes[r].name.as_str() } else { NOT_DETECTED };
        if r > k || record.get(0) != Some(expected) {
            problems.push(format!("row {}: expected label {expected:?}", r + 2));
            continue;
        }
        if record.len() != k + 2 {
            problems.push(format!("row {}: expected {} cells", r + 2, k + 2));
            continue;
        }
        for c in 0..=k {
            match parse(&record[c + 1]) {
                Ok(v) => grid[r][c] = v,
                Err(e) => problems.push(format!("row {}: {e}", r + 2)),
            }
        }
        rows += 1;
    }
    if k > 0 && rows != k + 1 {
        problems.push(format!("expected {} rows, found {rows}", k + 1));
    }
    if !problems.is_empty() {
        return Err(Error::validation_with("malformed confusion CSV", problems));
    }
    Ok((classes, grid))
}

fn render_text(
    header: Vec<String>,
    k: usize,
    row_label: impl Fn(usize) -> String,
    cell: impl Fn(usize, usize) -> String,
) -> String {
    let mut rows = vec![header];
    if k > 0 {
        for r in 0..=k {
            let mut row = vec![row_label(r)];
            row.extend((0..=k).map(|c| cell(r, c)));
            rows.push(row);
        }
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

/// Matrix over `outcomes`, which must all come from matching under `config`.
pub fn build_extended<'a>(
    outcomes: impl IntoIterator<Item = &'a MatchOutcome>,
    table: &CategoryTable,
    config: MatchConfig,
) -> Result<ExtendedConfusionMatrix> {
    let mut cm = ExtendedConfusionMatrix::empty(table, config);
    for o in outcomes {
        cm.add_outcome(o)?;
    }
    Ok(cm)
}

/// Match the images of `split` in parallel and merge per-image grids.
pub fn confusion_for(
    corpus: &Corpus,
    dets: &DetectionSet,
    config: MatchConfig,
    split: Option<Split>,
    workers: usize,
) -> Result<ExtendedConfusionMatrix> {
    config.validate()?;
    let partials = engine::map_images(corpus, dets, split, workers, |view| {
        let o = crate::matching::match_image(&view.gts, &view.dets, &config)?;
        build_extended([&o], corpus.categories(), config)
    })?;
    let mut cm = ExtendedConfusionMatrix::empty(corpus.categories(), config);
    for p in &partials {
        cm.merge(p)?;
    }
    Ok(cm)
}

/// Matching settings for confusion analysis: class-agnostic at IoU 0.75 and
/// score 0.75.
pub fn default_config() -> MatchConfig {
    MatchConfig {
        iou_threshold: 0.75,
        score_threshold: 0.75,
        mode: MatchMode::ClassAgnostic,
        ..MatchConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::{DetRef, GtRef, MatchPair};

    fn table() -> CategoryTable {
        CategoryTable::cytology()
    }

    fn id(name: &str) -> CategoryId {
        table().require(name).unwrap()
    }

    fn pair(det: CategoryId, gt: CategoryId) -> MatchPair {
        MatchPair {
            det_index: 0,
            det_category: det,
            score: 0.9,
            gt_id: 1,
            gt_category: gt,
            iou: 0.9,
        }
    }

    fn outcome(pairs: Vec<MatchPair>, nd: &[CategoryId], np: &[CategoryId]) -> MatchOutcome {
        MatchOutcome {
            mode: MatchMode::ClassAgnostic,
            pairs,
            not_detected: nd.iter().map(|&c| GtRef { id: 9, category: c }).collect(),
            not_present: np
                .iter()
                .map(|&c| DetRef {
                    index: 5,
                    category: c,
                    score: 0.8,
                })
                .collect(),
        }
    }

    #[test]
    fn hand_counted_scene() {
        let (ly, ma) = (id("lymphoma"), id("macrophage"));
        let o = outcome(vec![pair(ly, ly)], &[ly], &[ma]);
        let cm = build_extended([&o], &table(), default_config()).unwrap();
        assert_eq!(cm.cell(Some(ly), Some(ly)).unwrap(), 1);
        assert_eq!(cm.cell(None, Some(ly)).unwrap(), 1);
        assert_eq!(cm.cell(Some(ma), None).unwrap(), 1);
        assert_eq!(cm.total(), 3);
        assert_eq!(cm.mistakes(), 2);
        assert_eq!(cm.cell(None, None).unwrap(), 0);
    }

    #[test]
    fn mode_mismatch() {
        let mut o = outcome(vec![], &[], &[]);
        o.mode = MatchMode::Classwise;
        assert!(matches!(
            build_extended([&o], &table(), default_config()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn basic_reduction() {
        let (ly, da) = (id("lymphoma"), id("damaged"));
        let o = outcome(vec![pair(da, ly), pair(ly, ly)], &[da], &[]);
        let cm = build_extended([&o], &table(), default_config()).unwrap();
        assert_eq!(cm.reduce_to_basic(&[]).unwrap(), cm);
        let basic = cm.reduce_to_basic(&table().non_diagnostic()).unwrap();
        assert_eq!(basic.class_count(), 8);
        assert_eq!(basic.total(), 1);
        assert_eq!(basic.cell(Some(ly), Some(ly)).unwrap(), 1);
        let all: Vec<CategoryId> = table().ids().collect();
        let empty = cm.reduce_to_basic(&all).unwrap();
        assert_eq!(empty.class_count(), 0);
        assert_eq!(empty.to_csv(), "predicted\\true,not-present\n");
        assert!(cm.reduce_to_basic(&[42]).is_err());
    }

    #[test]
    fn differences() {
        let ly = id("lymphoma");
        let a = build_extended([&outcome(vec![], &[ly], &[])], &table(), default_config()).unwrap();
        let b = build_extended([&outcome(vec![pair(ly, ly)], &[], &[])], &table(), default_config())
            .unwrap();
        assert!(diff(&a, &a).unwrap().is_zero());
        let d = diff(&a, &b).unwrap();
        let k = a.class_count();
        let p = (ly - 1) as usize;
        assert_eq!(d.grid[p][p], -1);
        assert_eq!(d.grid[k][p], 1);
        assert_eq!(d.grid.iter().flatten().filter(|v| **v != 0).count(), 2);
        assert!(!d.is_pure_improvement());
        let rev = diff(&b, &a).unwrap();
        assert!(rev.is_pure_improvement());
        assert_eq!(rev.grid, d.negate().grid);

        let other_cfg = MatchConfig {
            iou_threshold: 0.5,
            ..default_config()
        };
        assert!(diff(&a, &ExtendedConfusionMatrix::empty(&table(), other_cfg)).is_err());
    }

    #[test]
    fn render_and_parse() {
        let two = CategoryTable::new(vec![
            crate::corpus::Category {
                id: 1,
                name: "A".into(),
                diagnostic: true,
                aliases: vec![],
            },
            crate::corpus::Category {
                id: 2,
                name: "B".into(),
                diagnostic: true,
                aliases: vec![],
            },
        ])
        .unwrap();
        let o = outcome(vec![pair(1, 2), pair(2, 2)], &[1], &[2]);
        let cm = build_extended([&o], &two, default_config()).unwrap().with_label("m");
        let csv = cm.to_csv();
        assert_eq!(
            csv,
            "predicted\\true,A,B,not-present\nA,0,1,0\nB,0,1,1\nnot-detected,1,0,0\n"
        );
        let back = ExtendedConfusionMatrix::from_csv(&csv, &two, default_config())
            .unwrap()
            .with_label("m");
        assert_eq!(back, cm);
        assert_eq!(ExtendedConfusionMatrix::from_json(&cm.to_json()).unwrap(), cm);
        assert!(cm.to_text().lines().count() == 4);
        let d = diff(&cm, &cm).unwrap();
        assert_eq!(DifferenceMatrix::from_csv(&d.to_csv(), &two).unwrap().grid, d.grid);
    }
}
