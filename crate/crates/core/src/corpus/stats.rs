//! Per-class, per-split object counts checked against an expected table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::{CategoryId, Corpus, Split};
use crate::error::{Error, Result};

/// Object counts keyed by (category, split).
pub fn class_split_counts(corpus: &Corpus) -> BTreeMap<(CategoryId, Split), u64> {
    let mut counts = BTreeMap::new();
    for img in corpus.images() {
        for a in corpus.annotations_for(img.id) {
            *counts.entry((a.category_id, img.split)).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectedRow {
    /// Category name, or `Total` for the column-sum row.
    pub category: String,
    pub train: Option<u64>,
    pub test: Option<u64>,
    pub val: Option<u64>,
    pub total: Option<u64>,
}

/// Expected counts table: CSV with a `category` column followed by any of
/// `train`, `test`, `val`, `total`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExpectedCounts {
    pub rows: Vec<ExpectedRow>,
}

impl ExpectedCounts {
    pub fn parse(text: &str) -> Result<Self> {
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
        let category_col = col("category")
            .ok_or_else(|| Error::validation("expected-counts file needs a `category` column"))?;
        let (train, test, val, total) = (col("train"), col("test"), col("val"), col("total"));
        let mut rows = Vec::new();
        for (lineno, record) in reader.records().enumerate() {
            let record = record?;
            let cell = |i: Option<usize>| -> Result<Option<u64>> {
                match i.and_then(|i| record.get(i)).filter(|s| !s.is_empty()) {
                    None => Ok(None),
                    Some(s) => s.parse().map(Some).map_err(|_| {
                        Error::validation_with(
                            "bad count in expected-counts file",
                            vec![format!("row {}: {s:?}", lineno + 2)],
                        )
                    }),
                }
            };
            rows.push(ExpectedRow {
                category: record.get(category_col).unwrap_or_default().to_string(),
                train: cell(train)?,
                test: cell(test)?,
                val: cell(val)?,
                total: cell(total)?,
            });
        }
        Ok(ExpectedCounts { rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExpectedCounts::parse(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatEntry {
    pub category: String,
    /// `train`, `test`, `val` or `total`.
    pub column: String,
    pub expected: u64,
    /// `None` when the category name is not in the table.
    pub actual: Option<u64>,
}

impl StatEntry {
    pub fn matches(&self) -> bool {
        self.actual == Some(self.expected)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatisticsReport {
    pub entries: Vec<StatEntry>,
}

impl StatisticsReport {
    pub fn mismatches(&self) -> impl Iterator<Item = &StatEntry> {
        self.entries.iter().filter(|e| !e.matches())
    }

    pub fn passed(&self) -> bool {
        self.mismatches().next().is_none()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,column,expected,actual,status\n");
        for e in &self.entries {
            let actual = e.actual.map_or_else(|| "unknown".to_string(), |a| a.to_string());
            let status = if e.matches() { "ok" } else { "MISMATCH" };
            let _ = writeln!(out, "{},{},{},{},{}", e.category, e.column, e.expected, actual, status);
        }
        out
    }
}

/// Compare computed counts with the expected table, cell by cell.
pub fn validate_statistics(corpus: &Corpus, expected: &ExpectedCounts) -> StatisticsReport {
    let counts = class_split_counts(corpus);
    let actual = |cat: Option<CategoryId>, split: Option<Split>| -> u64 {
        counts
            .iter()
            .filter(|((c, s), _)| cat.is_none_or(|x| x == *c) && split.is_none_or(|x| x == *s))
            .map(|(_, n)| *n)
            .sum()
    };
    let mut entries = Vec::new();
    for row in &expected.rows {
        let scope = if row.category.eq_ignore_ascii_case("total") {
            Some(None)
        } else {
            corpus.categories().resolve(&row.category).map(Some)
        };
        let cells = [
            ("train", Some(Split::Train), row.train),
            ("test", Some(Split::Test), row.test),
            ("val", Some(Split::Val), row.val),
            ("total", None, row.total),
        ];
        for (column, split, want) in cells {
            let Some(want) = want else { continue };
            entries.push(StatEntry {
                category: row.category.clone(),
                column: column.to_string(),
                expected: want,
                actual: scope.map(|cat| actual(cat, split)),
            });
        }
    }
    StatisticsReport { entries }
}
