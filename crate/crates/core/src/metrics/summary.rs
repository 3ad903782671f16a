use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CategoryId, CategoryTable};
use crate::error::{Error, Result};

/// The four reported quantities, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ap,
    Ap50,
    Ap75,
    Ar,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Ap, Metric::Ap50, Metric::Ap75, Metric::Ar];

    pub fn title(self) -> &'static str {
        match self {
            Metric::Ar => "Average Recall",
            _ => "Average Precision",
        }
    }

    pub fn iou_label(self) -> &'static str {
        match self {
            Metric::Ap | Metric::Ar => "0.50:0.95",
            Metric::Ap50 => "0.50",
            Metric::Ap75 => "0.75",
        }
    }

    /// Column name in stored result files.
    pub fn key(self) -> &'static str {
        match self {
            Metric::Ap => "ap",
            Metric::Ap50 => "ap50",
            Metric::Ap75 => "ap75",
            Metric::Ar => "ar",
        }
    }
}

/// Per-class values; `None` where the class has no ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub category: CategoryId,
    pub name: String,
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ar: Option<f64>,
}

impl ClassMetrics {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Ap => self.ap,
            Metric::Ap50 => self.ap50,
            Metric::Ap75 => self.ap75,
            Metric::Ar => self.ar,
        }
    }

    fn slot(&mut self, m: Metric) -> &mut Option<f64> {
        match m {
            Metric::Ap => &mut self.ap,
            Metric::Ap50 => &mut self.ap50,
            Metric::Ap75 => &mut self.ap75,
            Metric::Ar => &mut self.ar,
        }
    }
}

/// Unweighted means over the classes where each value is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalMetrics {
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ar: Option<f64>,
}

impl GlobalMetrics {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Ap => self.ap,
            Metric::Ap50 => self.ap50,
            Metric::Ap75 => self.ap75,
            Metric::Ar => self.ar,
        }
    }
}

pub fn macro_average(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.into_iter().flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub label: String,
    pub classes: Vec<ClassMetrics>,
    pub global: GlobalMetrics,
}

impl EvalSummary {
    pub fn new(label: &str, classes: Vec<ClassMetrics>) -> Self {
        let avg = |m: Metric| macro_average(classes.iter().map(|c| c.get(m)));
        let global = GlobalMetrics {
            ap: avg(Metric::Ap),
            ap50: avg(Metric::Ap50),
            ap75: avg(Metric::Ap75),
            ar: avg(Metric::Ar),
        };
        EvalSummary {
            label: label.to_string(),
            classes,
            global,
        }
    }

    pub fn class(&self, id: CategoryId) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.category == id)
    }

    /// Per-class values stored from an earlier run: CSV with a `category`
    /// column and any of `ap`, `ap50`, `ap75`, `ar`. Blank cells and classes
    /// absent from the file are undefined. Global values are recomputed.
    pub fn from_stored_csv(label: &str, text: &str, table: &CategoryTable) -> Result<Self> {
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
        let cat_col = col("category")
            .ok_or_else(|| Error::validation("stored results need a `category` column"))?;

        let mut classes: Vec<ClassMetrics> = table
            .iter()
            .map(|c| ClassMetrics {
                category: c.id,
                name: c.name.clone(),
                ap: None,
                ap50: None,
                ap75: None,
                ar: None,
            })
            .collect();
        let mut problems = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let line = i + 2;
            let name = record.get(cat_col).unwrap_or_default();
            let Some(id) = table.resolve(name) else {
                problems.push(format!("line {line}: unknown category {name:?}"));
                continue;
            };
            let entry = &mut classes[(id - 1) as usize];
            for m in Metric::ALL {
                let Some(cell) = col(m.key()).and_then(|c| record.get(c)) else {
                    continue;
                };
                if cell.is_empty() {
                    continue;
                }
                match cell.parse::<f64>() {
                    Ok(v) if (0.0..=1.0).contains(&v) => *entry.slot(m) = Some(v),
                    _ => problems.push(format!("line {line}: bad {} value {cell:?}", m.key())),
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::validation_with("invalid stored results", problems));
        }
        Ok(EvalSummary::new(label, classes))
    }

    pub fn read_stored(label: &str, path: &Path, table: &CategoryTable) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EvalSummary::from_stored_csv(label, &text, table)
    }

    /// Inverse of [`EvalSummary::from_stored_csv`], at full precision.
    pub fn to_stored_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.write_record(["category", "ap", "ap50", "ap75", "ar"]);
        for c in &self.classes {
            let mut row = vec![c.name.clone()];
            row.extend(Metric::ALL.iter().map(|&m| c.get(m).map_or(String::new(), |v| v.to_string())));
            let _ = w.write_record(&row);
        }
        csv_string(w)
    }
}

pub(crate) fn fmt3(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

pub(crate) fn csv_string(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("csv output is built from strings")
}

/// Per-class rows followed by `Global` rows, one value column per summary.
/// Classes follow the first summary; the others are aligned by category id.
pub fn render_csv(summaries: &[EvalSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["category".to_string(), "metric".into(), "iou_threshold".into()];
    header.extend(summaries.iter().map(|s| s.label.clone()));
    let _ = w.write_record(&header);
    if let Some(first) = summaries.first() {
        for c in &first.classes {
            for m in Metric::ALL {
                let mut row = vec![c.name.clone(), m.title().into(), m.iou_label().into()];
                row.extend(
                    summaries
                        .iter()
                        .map(|s| fmt3(s.class(c.category).and_then(|x| x.get(m)))),
                );
                let _ = w.write_record(&row);
            }
        }
        for m in Metric::ALL {
            let mut row = vec!["Global".to_string(), m.title().into(), m.iou_label().into()];
            row.extend(summaries.iter().map(|s| fmt3(s.global.get(m))));
            let _ = w.write_record(&row);
        }
    }
    csv_string(w)
}

pub fn render_json(summaries: &[EvalSummary]) -> String {
    serde_json::to_string_pretty(summaries).expect("summaries serialize") + "\n"
}
