//! JSON interchange layout for ground truth and detection files.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Annotation, Category, CategoryId, CategoryTable, Corpus, Detection, DetectionSet,
    FilterReport, ImageRecord, Segmentation, Shape, Split, SplitManifest,
};
use crate::codec;
use crate::error::{Error, Result};
use crate::mask::{BBox, BinaryMask};
use crate::polygon::Polygon;

/// How file categories map onto the evaluation's category table.
#[derive(Debug, Clone)]
pub enum CategoryScheme {
    /// Resolve file categories by name; unmatched classes are filtered out.
    Table(CategoryTable),
    /// Use the file's categories verbatim (ids must be contiguous from 1).
    FromFile,
}

impl Default for CategoryScheme {
    fn default() -> Self {
        CategoryScheme::Table(CategoryTable::cytology())
    }
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub scheme: CategoryScheme,
    pub splits: Option<SplitManifest>,
    /// Split assigned to every image when no manifest is given.
    pub default_split: Split,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            scheme: CategoryScheme::default(),
            splits: None,
            default_split: Split::Test,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDataset {
    images: Vec<RawImage>,
    #[serde(default)]
    categories: Vec<RawCategory>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawImage {
    id: u64,
    width: u32,
    height: u32,
    #[serde(default)]
    file_name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawCategory {
    id: u64,
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    diagnostic: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    segmentation: RawSegmentation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    area: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<[f64; 4]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDetection {
    image_id: u64,
    category_id: u64,
    segmentation: RawSegmentation,
    score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawSegmentation {
    Polygons(Vec<Vec<f64>>),
    Rle { size: [u32; 2], counts: RawCounts },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawCounts {
    Compressed(String),
    Runs(Vec<u64>),
}

impl RawSegmentation {
    fn into_shape(self, width: u32, height: u32) -> Result<Shape> {
        match self {
            RawSegmentation::Polygons(parts) => {
                let polys = parts
                    .iter()
                    .map(|flat| Polygon::from_flat(flat))
                    .collect::<Result<Vec<_>>>()?;
                Shape::from_polygons(polys, width, height)
            }
            RawSegmentation::Rle { size: [h, w], counts } => {
                if (w, h) != (width, height) {
                    return Err(Error::Dimension(format!(
                        "mask size {w}x{h} does not match image {width}x{height}"
                    )));
                }
                let mask = match counts {
                    RawCounts::Compressed(token) => codec::decompress(&token, w, h)?,
                    RawCounts::Runs(runs) => BinaryMask::from_runs(w, h, runs)?,
                };
                Ok(Shape::from_mask(mask))
            }
        }
    }

    fn from_shape(shape: &Shape) -> Self {
        match shape.segmentation() {
            Segmentation::Polygons(parts) => {
                RawSegmentation::Polygons(parts.iter().map(Polygon::to_flat).collect())
            }
            Segmentation::Rle(mask) => RawSegmentation::Rle {
                size: [mask.height(), mask.width()],
                counts: RawCounts::Compressed(codec::compress(mask)),
            },
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_ground_truth(path: &Path, opts: &ParseOptions) -> Result<Corpus> {
    let text = read_text(path)?;
    let raw: RawDataset = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    build_corpus(raw, opts)
}

pub fn parse_ground_truth_str(text: &str, opts: &ParseOptions) -> Result<Corpus> {
    let raw: RawDataset =
        serde_json::from_str(text).map_err(|e| Error::json("<ground truth>", e))?;
    build_corpus(raw, opts)
}

fn build_corpus(raw: RawDataset, opts: &ParseOptions) -> Result<Corpus> {
    let mut problems = Vec::new();

    let mut seen_cat = HashSet::new();
    for c in &raw.categories {
        if !seen_cat.insert(c.id) {
            problems.push(format!("duplicate category id {}", c.id));
        }
    }
    let (table, category_map) = match &opts.scheme {
        CategoryScheme::Table(table) => {
            let map: BTreeMap<u64, (String, Option<CategoryId>)> = raw
                .categories
                .iter()
                .map(|c| (c.id, (c.name.clone(), table.resolve(&c.name))))
                .collect();
            (table.clone(), map)
        }
        CategoryScheme::FromFile => {
            let mut cats: Vec<&RawCategory> = raw.categories.iter().collect();
            cats.sort_by_key(|c| c.id);
            let table = CategoryTable::new(
                cats.iter()
                    .map(|c| Category {
                        id: c.id as CategoryId,
                        name: c.name.clone(),
                        diagnostic: c.diagnostic.unwrap_or(true),
                        aliases: Vec::new(),
                    })
                    .collect(),
            )?;
            let map = cats
                .iter()
                .map(|c| (c.id, (c.name.clone(), Some(c.id as CategoryId))))
                .collect();
            (table, map)
        }
    };

    let mut images = Vec::with_capacity(raw.images.len());
    let mut dims = BTreeMap::new();
    for img in raw.images {
        if img.width == 0 || img.height == 0 {
            problems.push(format!("image {} has size {}x{}", img.id, img.width, img.height));
            continue;
        }
        if dims.insert(img.id, (img.width, img.height)).is_some() {
            problems.push(format!("duplicate image id {}", img.id));
            continue;
        }
        let split = match &opts.splits {
            Some(m) => match m.splits.get(&img.id) {
                Some(&s) => s,
                None => {
                    problems.push(format!("image {} not in split manifest", img.id));
                    continue;
                }
            },
            None => opts.default_split,
        };
        images.push(ImageRecord {
            id: img.id,
            width: img.width,
            height: img.height,
            split,
            file_name: img.file_name,
        });
    }
    if let Some(m) = &opts.splits {
        for id in m.splits.keys().filter(|id| !dims.contains_key(id)) {
            problems.push(format!("split manifest lists missing image id {id}"));
        }
    }

    let mut filtered = FilterReport::default();
    let mut annotations = Vec::with_capacity(raw.annotations.len());
    for a in raw.annotations {
        let Some(&(w, h)) = dims.get(&a.image_id) else {
            problems.push(format!(
                "annotation {} references missing image id {}",
                a.id, a.image_id
            ));
            continue;
        };
        let category_id = match category_map.get(&a.category_id) {
            None => {
                problems.push(format!(
                    "annotation {} references missing category id {}",
                    a.id, a.category_id
                ));
                continue;
            }
            Some((name, None)) => {
                filtered.record(name);
                continue;
            }
            Some((_, Some(id))) => *id,
        };
        let is_rle = matches!(a.segmentation, RawSegmentation::Rle { .. });
        let shape = match a.segmentation.into_shape(w, h) {
            Ok(s) => s,
            Err(e) => {
                problems.push(format!("annotation {}: {e}", a.id));
                continue;
            }
        };
        if let (true, Some(area)) = (is_rle, a.area) {
            let actual = shape.mask().area();
            if area != actual as f64 {
                problems.push(format!(
                    "annotation {} declares area {area} but its mask has {actual} pixels",
                    a.id
                ));
            }
        }
        let bbox = a.bbox.and_then(|[x, y, w, h]| BBox::new(x, y, w, h).ok());
        annotations.push(Annotation {
            id: a.id,
            image_id: a.image_id,
            category_id,
            shape,
            bbox,
        });
    }

    if !problems.is_empty() {
        return Err(Error::validation_with("invalid ground truth", problems));
    }
    if filtered.total() > 0 {
        log::warn!(
            "filtered {} annotations of classes outside the category table: {:?}",
            filtered.total(),
            filtered.dropped
        );
    }
    Ok(Corpus::new(table, images, annotations)?.with_file_categories(category_map, filtered))
}

pub fn parse_detections(path: &Path, corpus: &Corpus) -> Result<DetectionSet> {
    let text = read_text(path)?;
    let raw: Vec<RawDetection> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    build_detections(raw, corpus)
}

pub fn parse_detections_str(text: &str, corpus: &Corpus) -> Result<DetectionSet> {
    let raw: Vec<RawDetection> =
        serde_json::from_str(text).map_err(|e| Error::json("<detections>", e))?;
    build_detections(raw, corpus)
}

fn build_detections(raw: Vec<RawDetection>, corpus: &Corpus) -> Result<DetectionSet> {
    let mut problems = Vec::new();
    let mut filtered = FilterReport::default();
    let mut dets = Vec::with_capacity(raw.len());
    for (index, d) in raw.into_iter().enumerate() {
        if !(0.0..=1.0).contains(&d.score) {
            problems.push(format!("detection {index} has score {} outside [0, 1]", d.score));
            continue;
        }
        let Some(img) = corpus.image(d.image_id) else {
            problems.push(format!("detection {index} references missing image id {}", d.image_id));
            continue;
        };
        let category_id = match corpus.map_file_category(d.category_id) {
            Err(_) => {
                problems.push(format!(
                    "detection {index} references unknown category id {}",
                    d.category_id
                ));
                continue;
            }
            Ok(None) => {
                filtered.record(corpus.file_category_name(d.category_id).unwrap_or("?"));
                continue;
            }
            Ok(Some(id)) => id,
        };
        match d.segmentation.into_shape(img.width, img.height) {
            Ok(shape) => dets.push(Detection {
                image_id: d.image_id,
                category_id,
                shape,
                score: d.score,
                index,
            }),
            Err(e) => problems.push(format!("detection {index}: {e}")),
        }
    }
    if !problems.is_empty() {
        return Err(Error::validation_with("invalid detections", problems));
    }
    if filtered.total() > 0 {
        log::warn!(
            "filtered {} detections of classes outside the category table: {:?}",
            filtered.total(),
            filtered.dropped
        );
    }
    Ok(DetectionSet::new(dets))
}

pub fn ground_truth_to_json(corpus: &Corpus) -> String {
    let raw = RawDataset {
        images: corpus
            .images()
            .iter()
            .map(|i| RawImage {
                id: i.id,
                width: i.width,
                height: i.height,
                file_name: i.file_name.clone(),
            })
            .collect(),
        categories: corpus
            .categories()
            .iter()
            .map(|c| RawCategory {
                id: c.id as u64,
                name: c.name.clone(),
                diagnostic: Some(c.diagnostic),
            })
            .collect(),
        annotations: corpus
            .annotations()
            .iter()
            .map(|a| RawAnnotation {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id as u64,
                segmentation: RawSegmentation::from_shape(&a.shape),
                area: Some(a.area() as f64),
                bbox: a.bbox.map(|b| [b.x, b.y, b.w, b.h]),
            })
            .collect(),
    };
    serde_json::to_string(&raw).expect("ground truth serializes")
}

/// Detections in original file order.
pub fn detections_to_json(dets: &DetectionSet) -> String {
    let mut all: Vec<&Detection> = dets.iter().collect();
    all.sort_by_key(|d| d.index);
    let raw: Vec<RawDetection> = all
        .into_iter()
        .map(|d| RawDetection {
            image_id: d.image_id,
            category_id: d.category_id as u64,
            segmentation: RawSegmentation::from_shape(&d.shape),
            score: d.score,
        })
        .collect();
    serde_json::to_string(&raw).expect("detections serialize")
}

pub fn write_ground_truth(corpus: &Corpus, path: &Path) -> Result<()> {
    std::fs::write(path, ground_truth_to_json(corpus)).map_err(|e| Error::io(path, e))
}

pub fn write_detections(dets: &DetectionSet, path: &Path) -> Result<()> {
    std::fs::write(path, detections_to_json(dets)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GT: &str = r#"{
        "info": {"description": "extra fields are ignored"},
        "images": [{"id": 1, "width": 4, "height": 4, "file_name": "a.jpg"},
                   {"id": 2, "width": 2, "height": 2, "file_name": "b.jpg"}],
        "categories": [{"id": 7, "name": "Lymphoma cells"},
                       {"id": 9, "name": "mitotic figure"},
                       {"id": 3, "name": "Macrophage", "supercategory": "cell"}],
        "annotations": [
            {"id": 10, "image_id": 1, "category_id": 7,
             "segmentation": [[0, 0, 2, 0, 2, 2, 0, 2]], "area": 4.0, "iscrowd": 0},
            {"id": 11, "image_id": 2, "category_id": 3,
             "segmentation": {"size": [2, 2], "counts": "04"}, "area": 4},
            {"id": 12, "image_id": 2, "category_id": 9,
             "segmentation": {"size": [2, 2], "counts": [1, 1, 2]}}
        ]
    }"#;

    #[test]
    fn parses_and_maps_categories() {
        let corpus = parse_ground_truth_str(GT, &ParseOptions::default()).unwrap();
        assert_eq!(corpus.images().len(), 2);
        assert_eq!(corpus.annotations().len(), 2);
        let a: Vec<_> = corpus.annotations_for(1).collect();
        assert_eq!(a[0].category_id, 3); // Lymphoma in the default table
        assert_eq!(a[0].area(), 4);
        assert!(matches!(a[0].shape.segmentation(), Segmentation::Polygons(_)));
        assert_eq!(corpus.filtered().dropped.get("mitotic figure"), Some(&1));
    }

    #[test]
    fn empty_annotations_are_fine() {
        let text = r#"{"images": [{"id": 1, "width": 3, "height": 3}], "categories": [], "annotations": []}"#;
        let corpus = parse_ground_truth_str(text, &ParseOptions::default()).unwrap();
        assert!(corpus.annotations().is_empty());
    }

    #[test]
    fn dangling_image_reference_is_named() {
        let text = r#"{"images": [{"id": 1, "width": 3, "height": 3}],
            "categories": [{"id": 1, "name": "Cut"}],
            "annotations": [{"id": 5, "image_id": 42, "category_id": 1,
                             "segmentation": {"size": [3, 3], "counts": "9"}}]}"#;
        let err = parse_ground_truth_str(text, &ParseOptions::default()).unwrap_err();
        assert!(err.to_string().contains("missing image id 42"), "{err}");
    }

    #[test]
    fn duplicate_ids_and_bad_masks_are_reported() {
        let text = r#"{"images": [{"id": 1, "width": 2, "height": 2}],
            "categories": [{"id": 1, "name": "Cut"}],
            "annotations": [
              {"id": 5, "image_id": 1, "category_id": 1, "segmentation": {"size": [2, 2], "counts": "4"}},
              {"id": 5, "image_id": 1, "category_id": 1, "segmentation": {"size": [2, 2], "counts": "5"}},
              {"id": 6, "image_id": 1, "category_id": 2, "segmentation": {"size": [2, 2], "counts": "4"}},
              {"id": 7, "image_id": 1, "category_id": 1, "segmentation": {"size": [2, 2], "counts": "04"}, "area": 3}
            ]}"#;
        let Error::Validation { records, .. } =
            parse_ground_truth_str(text, &ParseOptions::default()).unwrap_err()
        else {
            panic!("expected validation error");
        };
        assert!(records.iter().any(|r| r.contains("annotation 5: corrupt")), "{records:?}");
        assert!(records.iter().any(|r| r.contains("missing category id 2")));
        assert!(records.iter().any(|r| r.contains("declares area 3")));
    }

    #[test]
    fn from_file_scheme_requires_contiguous_ids() {
        let opts = ParseOptions {
            scheme: CategoryScheme::FromFile,
            ..Default::default()
        };
        assert!(parse_ground_truth_str(GT, &opts).is_err());
        let ok = r#"{"images": [], "categories": [{"id": 1, "name": "x"}, {"id": 2, "name": "y", "diagnostic": false}]}"#;
        let corpus = parse_ground_truth_str(ok, &opts).unwrap();
        assert_eq!(corpus.categories().non_diagnostic(), vec![2]);
    }

    #[test]
    fn detections_validate_and_sort() {
        let corpus = parse_ground_truth_str(GT, &ParseOptions::default()).unwrap();
        let dets = parse_detections_str("[]", &corpus).unwrap();
        assert!(dets.is_empty());

        let text = r#"[
            {"image_id": 2, "category_id": 3, "segmentation": {"size": [2, 2], "counts": "04"}, "score": 0.3},
            {"image_id": 2, "category_id": 3, "segmentation": {"size": [2, 2], "counts": "4"}, "score": 0.9}
        ]"#;
        let dets = parse_detections_str(text, &corpus).unwrap();
        let scores: Vec<f64> = dets.for_image(2).iter().map(|d| d.score).collect();
        assert_eq!(scores, vec![0.9, 0.3]);

        let bad = r#"[{"image_id": 2, "category_id": 3, "segmentation": {"size": [2, 2], "counts": "4"}, "score": 1.5}]"#;
        assert!(matches!(parse_detections_str(bad, &corpus), Err(Error::Validation { .. })));
        let unknown = r#"[{"image_id": 2, "category_id": 99, "segmentation": {"size": [2, 2], "counts": "4"}, "score": 0.5}]"#;
        assert!(matches!(parse_detections_str(unknown, &corpus), Err(Error::Validation { .. })));
    }

    #[test]
    fn roundtrip_through_json() {
        let corpus = parse_ground_truth_str(GT, &ParseOptions::default()).unwrap();
        let again = parse_ground_truth_str(&ground_truth_to_json(&corpus), &ParseOptions::default()).unwrap();
        assert_eq!(corpus, again);
    }
}
