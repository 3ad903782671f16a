use std::path::Path;

use cytoeval::corpus::{
    validate_statistics, Annotation, CategoryTable, Corpus, ExpectedCounts, ImageRecord, Shape, Split,
};
use cytoeval::mask::BinaryMask;

fn published() -> ExpectedCounts {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/dataset_counts.csv");
    ExpectedCounts::read(&path).unwrap()
}

/// One tiny image per split holding exactly the per-split counts of each
/// class row.
fn corpus_from_rows(expected: &ExpectedCounts) -> Corpus {
    let table = CategoryTable::cytology();
    let images: Vec<ImageRecord> = Split::ALL
        .iter()
        .enumerate()
        .map(|(i, &split)| ImageRecord {
            id: i as u64 + 1,
            width: 2,
            height: 2,
            split,
            file_name: format!("{}.png", split.as_str()),
        })
        .collect();
    let dot = Shape::from_mask(BinaryMask::from_runs(2, 2, vec![0, 1, 3]).unwrap());
    let mut annotations = Vec::new();
    for row in expected.rows.iter().filter(|r| !r.category.eq_ignore_ascii_case("total")) {
        let cat = table.resolve(&row.category).unwrap();
        for (img, n) in images.iter().zip([row.train, row.test, row.val]) {
            for _ in 0..n.unwrap() {
                annotations.push(Annotation {
                    id: annotations.len() as u64 + 1,
                    image_id: img.id,
                    category_id: cat,
                    shape: dot.clone(),
                    bbox: None,
                });
            }
        }
    }
    Corpus::new(table, images, annotations).unwrap()
}

#[test]
fn published_table_mismatches_are_exactly_the_inconsistent_totals() {
    let expected = published();
    let report = validate_statistics(&corpus_from_rows(&expected), &expected);
    assert_eq!(report.entries.len(), 12 * 4);
    let mut bad: Vec<(String, String, u64, Option<u64>)> = report
        .mismatches()
        .map(|e| (e.category.clone(), e.column.clone(), e.expected, e.actual))
        .collect();
    bad.sort();
    let want = [
        ("Damaged", "total", 10893, 10892),
        ("Lymphoma cells", "total", 7127, 7126),
        ("Total", "test", 10036, 12668),
        ("Total", "total", 71894, 77564),
        ("Total", "val", 10743, 13781),
    ];
    let want: Vec<_> = want
        .iter()
        .map(|&(c, col, e, a)| (c.to_string(), col.to_string(), e, Some(a)))
        .collect();
    assert_eq!(bad, want);
    assert!(!report.passed());
}

#[test]
fn consistent_table_passes() {
    let expected = published();
    let corpus = corpus_from_rows(&expected);
    let mut fixed = expected.clone();
    for row in &mut fixed.rows {
        row.total = None;
    }
    fixed.rows.retain(|r| !r.category.eq_ignore_ascii_case("total"));
    let report = validate_statistics(&corpus, &fixed);
    assert!(report.passed(), "{}", report.to_csv());
    assert_eq!(report.entries.len(), 11 * 3);
}
