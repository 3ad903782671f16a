//! Ground truth, detections and the category scheme they refer to.

mod category;
mod format;
mod stats;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BBox, BinaryMask};
use crate::polygon::{self, Polygon};

pub use category::{Category, CategoryId, CategoryTable};
pub(crate) use category::name_key;
pub use format::{
    detections_to_json, ground_truth_to_json, parse_detections, parse_detections_str,
    parse_ground_truth, parse_ground_truth_str, write_detections, write_ground_truth,
    CategoryScheme, ParseOptions,
};
pub use stats::{
    class_split_counts, validate_statistics, ExpectedCounts, ExpectedRow, StatEntry,
    StatisticsReport,
};

pub type ImageId = u64;
pub type AnnotationId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Val,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test, Split::Val];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Val => "val",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "val" | "valid" | "validation" => Ok(Split::Val),
            other => Err(Error::validation_with("unknown split", vec![other.to_string()])),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: ImageId,
    pub width: u32,
    pub height: u32,
    pub split: Split,
    pub file_name: String,
}

/// The outline an object was annotated with.
#[derive(Debug, Clone, PartialEq)]
pub enum Segmentation {
    Rle(BinaryMask),
    Polygons(Vec<Polygon>),
}

/// An object outline bound to its image size. Polygon outlines are rasterized
/// on first use and the mask is cached.
#[derive(Debug, Clone)]
pub struct Shape {
    segmentation: Segmentation,
    width: u32,
    height: u32,
    raster: OnceLock<BinaryMask>,
}

impl PartialEq for Shape {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.segmentation == other.segmentation
    }
}

impl Shape {
    pub fn from_mask(mask: BinaryMask) -> Self {
        Shape {
            width: mask.width(),
            height: mask.height(),
            segmentation: Segmentation::Rle(mask),
            raster: OnceLock::new(),
        }
    }

    pub fn from_polygons(parts: Vec<Polygon>, width: u32, height: u32) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Geometry("segmentation has no polygons".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "image must be non-empty, got {width}x{height}"
            )));
        }
        Ok(Shape {
            segmentation: Segmentation::Polygons(parts),
            width,
            height,
            raster: OnceLock::new(),
        })
    }

    pub fn segmentation(&self) -> &Segmentation {
        &self.segmentation
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn mask(&self) -> &BinaryMask {
        match &self.segmentation {
            Segmentation::Rle(m) => m,
            Segmentation::Polygons(parts) => self.raster.get_or_init(|| {
                polygon::rasterize_all(parts, self.width, self.height)
                    .expect("polygons and dimensions validated at construction")
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: AnnotationId,
    pub image_id: ImageId,
    pub category_id: CategoryId,
    pub shape: Shape,
    pub bbox: Option<BBox>,
}

impl Annotation {
    pub fn mask(&self) -> &BinaryMask {
        self.shape.mask()
    }

    pub fn area(&self) -> u64 {
        self.mask().area()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: ImageId,
    pub category_id: CategoryId,
    pub shape: Shape,
    pub score: f64,
    /// Position in the source file; breaks score ties.
    pub index: usize,
}

impl Detection {
    pub fn mask(&self) -> &BinaryMask {
        self.shape.mask()
    }
}

/// Names of input categories that are not part of the table, with the number
/// of records dropped for each.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FilterReport {
    pub dropped: BTreeMap<String, usize>,
}

impl FilterReport {
    pub fn total(&self) -> usize {
        self.dropped.values().sum()
    }

    pub(crate) fn record(&mut self, name: &str) {
        *self.dropped.entry(name.to_string()).or_default() += 1;
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    categories: CategoryTable,
    images: Vec<ImageRecord>,
    image_index: HashMap<ImageId, usize>,
    annotations: Vec<Annotation>,
    by_image: HashMap<ImageId, Vec<usize>>,
    /// Input-file category id to table id (`None` for filtered classes).
    category_map: BTreeMap<u64, (String, Option<CategoryId>)>,
    filtered: FilterReport,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.categories == other.categories
            && self.images == other.images
            && self.annotations == other.annotations
    }
}

impl Corpus {
    /// Assemble and validate. Images are ordered by id, annotations by
    /// (image id, annotation id).
    pub fn new(
        categories: CategoryTable,
        mut images: Vec<ImageRecord>,
        mut annotations: Vec<Annotation>,
    ) -> Result<Self> {
        images.sort_by_key(|i| i.id);
        let mut problems = Vec::new();
        for w in images.windows(2) {
            if w[0].id == w[1].id {
                problems.push(format!("duplicate image id {}", w[0].id));
            }
        }
        for img in &images {
            if img.width == 0 || img.height == 0 {
                problems.push(format!("image {} has size {}x{}", img.id, img.width, img.height));
            }
        }
        let image_index: HashMap<ImageId, usize> =
            images.iter().enumerate().map(|(i, img)| (img.id, i)).collect();

        annotations.sort_by_key(|a| (a.image_id, a.id));
        let mut seen = HashMap::new();
        for a in &annotations {
            if seen.insert(a.id, ()).is_some() {
                problems.push(format!("duplicate annotation id {}", a.id));
            }
            match image_index.get(&a.image_id) {
                None => problems.push(format!("annotation {} references missing image id {}", a.id, a.image_id)),
                Some(&i) => {
                    let img = &images[i];
                    if a.shape.width() != img.width || a.shape.height() != img.height {
                        problems.push(format!(
                            "annotation {} is {}x{} but image {} is {}x{}",
                            a.id,
                            a.shape.width(),
                            a.shape.height(),
                            img.id,
                            img.width,
                            img.height
                        ));
                    }
                }
            }
            if !categories.contains(a.category_id) {
                problems.push(format!("annotation {} references missing category id {}", a.id, a.category_id));
            }
        }
        if !problems.is_empty() {
            return Err(Error::validation_with("invalid ground truth", problems));
        }

        let mut by_image: HashMap<ImageId, Vec<usize>> = HashMap::new();
        for (i, a) in annotations.iter().enumerate() {
            by_image.entry(a.image_id).or_default().push(i);
        }
        let category_map = categories
            .iter()
            .map(|c| (c.id as u64, (c.name.clone(), Some(c.id))))
            .collect();
        Ok(Corpus {
            categories,
            images,
            image_index,
            annotations,
            by_image,
            category_map,
            filtered: FilterReport::default(),
        })
    }

    pub(crate) fn with_file_categories(
        mut self,
        category_map: BTreeMap<u64, (String, Option<CategoryId>)>,
        filtered: FilterReport,
    ) -> Self {
        self.category_map = category_map;
        self.filtered = filtered;
        self
    }

    pub fn categories(&self) -> &CategoryTable {
        &self.categories
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn image(&self, id: ImageId) -> Option<&ImageRecord> {
        self.image_index.get(&id).map(|&i| &self.images[i])
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    /// Annotations of one image in ascending annotation id.
    pub fn annotations_for(&self, image_id: ImageId) -> impl Iterator<Item = &Annotation> {
        self.by_image
            .get(&image_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.annotations[i])
    }

    /// Images of the given split (all images for `None`), ascending id.
    pub fn images_in(&self, split: Option<Split>) -> impl Iterator<Item = &ImageRecord> {
        self.images
            .iter()
            .filter(move |img| split.is_none_or(|s| img.split == s))
    }

    pub fn filtered(&self) -> &FilterReport {
        &self.filtered
    }

    /// Map a category id from an input file to the table.
    /// `Ok(None)` means the class is known but filtered out.
    pub(crate) fn map_file_category(&self, file_id: u64) -> Result<Option<CategoryId>> {
        self.category_map
            .get(&file_id)
            .map(|(_, mapped)| *mapped)
            .ok_or_else(|| Error::validation_with("unknown category id", vec![file_id.to_string()]))
    }

    pub(crate) fn file_category_name(&self, file_id: u64) -> Option<&str> {
        self.category_map.get(&file_id).map(|(n, _)| n.as_str())
    }

    /// Reassign splits from a manifest. Every image must be listed exactly once.
    pub fn apply_splits(&mut self, manifest: &SplitManifest) -> Result<()> {
        let missing: Vec<String> = self
            .images
            .iter()
            .filter(|img| !manifest.splits.contains_key(&img.id))
            .map(|img| format!("image {} not in split manifest", img.id))
            .collect();
        let unknown: Vec<String> = manifest
            .splits
            .keys()
            .filter(|id| !self.image_index.contains_key(id))
            .map(|id| format!("split manifest lists missing image id {id}"))
            .collect();
        if !missing.is_empty() || !unknown.is_empty() {
            return Err(Error::validation_with(
                "split manifest does not match images",
                missing.into_iter().chain(unknown).collect(),
            ));
        }
        for img in &mut self.images {
            img.split = manifest.splits[&img.id];
        }
        Ok(())
    }

    pub fn split_manifest(&self) -> SplitManifest {
        SplitManifest {
            splits: self.images.iter().map(|i| (i.id, i.split)).collect(),
        }
    }
}

/// `<image_id>,<train|test|val>` per line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitManifest {
    pub splits: BTreeMap<ImageId, Split>,
}

impl SplitManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut splits = BTreeMap::new();
        let mut problems = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((id, split)) = line.split_once(',') else {
                problems.push(format!("line {}: expected <image_id>,<split>", lineno + 1));
                continue;
            };
            let id: ImageId = match id.trim().parse() {
                Ok(id) => id,
                Err(_) => {
                    problems.push(format!("line {}: bad image id {:?}", lineno + 1, id));
                    continue;
                }
            };
            match split.parse::<Split>() {
                Ok(s) => {
                    if let Some(prev) = splits.insert(id, s) {
                        if prev != s {
                            problems.push(format!("image {id} listed in both {prev} and {s}"));
                        }
                    }
                }
                Err(_) => problems.push(format!("line {}: unknown split {:?}", lineno + 1, split)),
            }
        }
        if problems.is_empty() {
            Ok(SplitManifest { splits })
        } else {
            Err(Error::validation_with("malformed split manifest", problems))
        }
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SplitManifest::parse(&text)
    }

    pub fn render(&self) -> String {
        self.splits
            .iter()
            .map(|(id, s)| format!("{id},{s}\n"))
            .collect()
    }
}

/// Detections grouped by image; within an image, score-descending with
/// insertion order breaking ties.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSet {
    by_image: BTreeMap<ImageId, Vec<Detection>>,
    len: usize,
}

impl DetectionSet {
    pub fn new(detections: impl IntoIterator<Item = Detection>) -> Self {
        let mut by_image: BTreeMap<ImageId, Vec<Detection>> = BTreeMap::new();
        let mut len = 0;
        for d in detections {
            by_image.entry(d.image_id).or_default().push(d);
            len += 1;
        }
        for dets in by_image.values_mut() {
            sort_by_score(dets);
        }
        DetectionSet { by_image, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn for_image(&self, image_id: ImageId) -> &[Detection] {
        self.by_image.get(&image_id).map_or(&[], Vec::as_slice)
    }

    pub fn image_ids(&self) -> impl Iterator<Item = ImageId> + '_ {
        self.by_image.keys().copied()
    }

    /// All detections, by image id then score order.
    pub fn iter(&self) -> impl Iterator<Item = &Detection> {
        self.by_image.values().flatten()
    }
}

pub(crate) fn sort_by_score(dets: &mut [Detection]) {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
}
