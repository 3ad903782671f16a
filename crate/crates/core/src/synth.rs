//! Synthetic scenes with known evaluation outcomes.
//!
//! Every image draws from its own stream of a seeded ChaCha8 generator, so a
//! scene depends only on the seed and the image position and can be built in
//! parallel.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confusion::ExtendedConfusionMatrix;
use crate::corpus::{
    write_detections, write_ground_truth, Annotation, CategoryId, CategoryTable, Corpus,
    Detection, DetectionSet, ImageId, ImageRecord, Shape, Split,
};
use crate::error::{Error, Result};
use crate::mask::{Bitmap, BinaryMask};
use crate::matching::MatchConfig;
use crate::metrics::Counts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Rectangle,
    Ellipse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapPolicy {
    /// No two objects share a pixel.
    Disjoint,
    /// Pairwise mask IoU stays at or below the bound.
    BoundedIou(f64),
}

/// How many objects of which class each image holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMix {
    /// The same per-class counts in every image.
    Exact(Vec<(CategoryId, usize)>),
    /// A uniform object count in `min..=max`, classes drawn by weight.
    Weighted {
        weights: Vec<(CategoryId, f64)>,
        min: usize,
        max: usize,
    },
}

/// Test-split object counts of the eleven cytology classes, in table order.
pub const CYTOLOGY_TEST_COUNTS: [u64; 11] = [2632, 964, 1253, 253, 80, 1904, 171, 14, 1456, 2030, 1911];

impl ClassMix {
    /// Classes weighted by the cytology test-split frequencies.
    pub fn cytology(min: usize, max: usize) -> ClassMix {
        ClassMix::Weighted {
            weights: CYTOLOGY_TEST_COUNTS
                .iter()
                .enumerate()
                .map(|(i, &n)| (i as CategoryId + 1, n as f64))
                .collect(),
            min,
            max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub categories: CategoryTable,
    pub images: usize,
    pub width: u32,
    pub height: u32,
    pub mix: ClassMix,
    pub shape: ShapeFamily,
    /// Object bounding-box side lengths, inclusive.
    pub min_size: u32,
    pub max_size: u32,
    pub overlap: OverlapPolicy,
    /// Placement attempts per object before giving up.
    pub max_attempts: usize,
    pub split: Split,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            categories: CategoryTable::cytology(),
            images: 20,
            width: 128,
            height: 128,
            mix: ClassMix::cytology(3, 8),
            shape: ShapeFamily::Rectangle,
            min_size: 6,
            max_size: 16,
            overlap: OverlapPolicy::Disjoint,
            max_attempts: 200,
            split: Split::Test,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 {
            return fail(format!("image size {}x{} is empty", self.width, self.height));
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return fail(format!("object size range {}..={} is invalid", self.min_size, self.max_size));
        }
        if let OverlapPolicy::BoundedIou(b) = self.overlap {
            if !(0.0..=1.0).contains(&b) {
                return fail(format!("IoU bound {b} outside [0, 1]"));
            }
        }
        let check_class = |c: CategoryId| {
            if self.categories.contains(c) {
                Ok(())
            } else {
                Err(Error::Config(format!("class {c} is not in the category table")))
            }
        };
        match &self.mix {
            ClassMix::Exact(counts) => {
                for (c, _) in counts {
                    check_class(*c)?;
                }
            }
            ClassMix::Weighted { weights, min, max } => {
                if min > max {
                    return fail(format!("object count range {min}..={max} is invalid"));
                }
                if *max > 0 && !weights.iter().any(|(_, w)| *w > 0.0) {
                    return fail("class weights are all zero".into());
                }
                for (c, w) in weights {
                    check_class(*c)?;
                    if !(w.is_finite() && *w >= 0.0) {
                        return fail(format!("class {c} has weight {w}"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Ground truth and the detections that reproduce it exactly (score 1, same
/// class, same mask).
#[derive(Debug, Clone)]
pub struct Scene {
    pub corpus: Corpus,
    pub perfect: DetectionSet,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn generate(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let per_image: Vec<Vec<(CategoryId, BinaryMask)>> = (0..spec.images)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(spec.seed, i as u64);
            let classes = draw_classes(spec, &mut rng);
            place_objects(spec, &classes, &mut rng).map_err(|e| match e {
                Error::Capacity(m) => Error::Capacity(format!("image {}: {m}", i + 1)),
                other => other,
            })
        })
        .collect::<Result<_>>()?;

    let mut images = Vec::with_capacity(spec.images);
    let mut annotations = Vec::new();
    let mut detections = Vec::new();
    for (i, objects) in per_image.into_iter().enumerate() {
        let image_id = i as ImageId + 1;
        images.push(ImageRecord {
            id: image_id,
            width: spec.width,
            height: spec.height,
            split: spec.split,
            file_name: format!("synth_{image_id:05}.png"),
        });
        for (category, mask) in objects {
            let id = annotations.len() as u64 + 1;
            let bbox = mask.bbox().ok();
            detections.push(Detection {
                image_id,
                category_id: category,
                shape: Shape::from_mask(mask.clone()),
                score: 1.0,
                index: detections.len(),
            });
            annotations.push(Annotation {
                id,
                image_id,
                category_id: category,
                shape: Shape::from_mask(mask),
                bbox,
            });
        }
    }
    Ok(Scene {
        corpus: Corpus::new(spec.categories.clone(), images, annotations)?,
        perfect: DetectionSet::new(detections),
    })
}

fn draw_classes(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<CategoryId> {
    match &spec.mix {
        ClassMix::Exact(counts) => counts
            .iter()
            .flat_map(|&(c, n)| std::iter::repeat_n(c, n))
            .collect(),
        ClassMix::Weighted { weights, min, max } => {
            let n = rng.random_range(*min..=*max);
            if n == 0 {
                return Vec::new();
            }
            let dist = WeightedIndex::new(weights.iter().map(|(_, w)| *w))
                .expect("weights validated");
            (0..n).map(|_| weights[dist.sample(rng)].0).collect()
        }
    }
}

fn random_shape(
    family: ShapeFamily,
    width: u32,
    height: u32,
    min_size: u32,
    max_size: u32,
    rng: &mut ChaCha8Rng,
) -> BinaryMask {
    let w = rng.random_range(min_size..=max_size).min(width);
    let h = rng.random_range(min_size..=max_size).min(height);
    let x0 = rng.random_range(0..=width - w);
    let y0 = rng.random_range(0..=height - h);
    let mut bm = Bitmap::new(width, height).expect("non-empty image");
    let (cx, cy) = (x0 as f64 + w as f64 / 2.0, y0 as f64 + h as f64 / 2.0);
    let (rx, ry) = (w as f64 / 2.0, h as f64 / 2.0);
    for col in x0..x0 + w {
        for row in y0..y0 + h {
            let inside = match family {
                ShapeFamily::Rectangle => true,
                ShapeFamily::Ellipse => {
                    let dx = (col as f64 + 0.5 - cx) / rx;
                    let dy = (row as f64 + 0.5 - cy) / ry;
                    dx * dx + dy * dy <= 1.0
                }
            };
            if inside {
                bm.set(col, row, true);
            }
        }
    }
    BinaryMask::encode(&bm)
}

fn place_objects(
    spec: &SceneSpec,
    classes: &[CategoryId],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(CategoryId, BinaryMask)>> {
    let mut placed: Vec<(CategoryId, BinaryMask)> = Vec::with_capacity(classes.len());
    for &c in classes {
        let mut found = None;
        for _ in 0..spec.max_attempts {
            let m = random_shape(spec.shape, spec.width, spec.height, spec.min_size, spec.max_size, rng);
            let fits = placed.iter().all(|(_, other)| match spec.overlap {
                OverlapPolicy::Disjoint => m.intersection_area(other).expect("same size") == 0,
                OverlapPolicy::BoundedIou(b) => m.iou(other).expect("same size") <= b,
            });
            if fits {
                found = Some(m);
                break;
            }
        }
        match found {
            Some(m) => placed.push((c, m)),
            None => {
                return Err(Error::Capacity(format!(
                    "could not place object {} of {} within {} attempts",
                    placed.len() + 1,
                    classes.len(),
                    spec.max_attempts
                )))
            }
        }
    }
    Ok(placed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Probability that a ground-truth object gets no detection.
    pub drop_rate: f64,
    /// Expected phantom detections per ground-truth object. Phantoms share no
    /// pixel with any ground truth.
    pub phantom_rate: f64,
    /// Probability that a kept detection carries a wrong class.
    pub flip_rate: f64,
    /// Weights for the wrong class; empty means uniform over the others.
    pub flip_targets: Vec<(CategoryId, f64)>,
    /// Chebyshev radius: positive dilates, negative erodes.
    pub jitter: i32,
    /// Correct detections score in `[tp_score_min, 1]`.
    pub tp_score_min: f64,
    /// Flipped and phantom detections score in `[0, fp_score_max]`.
    pub fp_score_max: f64,
    /// Phantom bounding-box side lengths, inclusive.
    pub phantom_size: (u32, u32),
    pub seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            drop_rate: 0.0,
            phantom_rate: 0.0,
            flip_rate: 0.0,
            flip_targets: Vec::new(),
            jitter: 0,
            tp_score_min: 1.0,
            fp_score_max: 1.0,
            phantom_size: (4, 12),
            seed: 0,
        }
    }
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let fail = |m: String| Err(Error::Config(m));
        if !unit(self.drop_rate) || !unit(self.flip_rate) {
            return fail("drop and flip rates must lie in [0, 1]".into());
        }
        if !(self.phantom_rate.is_finite() && self.phantom_rate >= 0.0) {
            return fail(format!("phantom rate {} must be non-negative", self.phantom_rate));
        }
        if !unit(self.tp_score_min) || !unit(self.fp_score_max) {
            return fail("score bounds must lie in [0, 1]".into());
        }
        let (lo, hi) = self.phantom_size;
        if lo == 0 || lo > hi {
            return fail(format!("phantom size range {lo}..={hi} is invalid"));
        }
        if self.flip_targets.iter().any(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return fail("flip target weights must be non-negative".into());
        }
        Ok(())
    }
}

/// Counts of what a perturbation did, per class.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedLedger {
    pub gt: BTreeMap<CategoryId, u64>,
    /// Ground truth with a same-class detection.
    pub kept: BTreeMap<CategoryId, u64>,
    /// Ground truth with no detection.
    pub dropped: BTreeMap<CategoryId, u64>,
    /// predicted class -> true class -> count.
    pub flips: BTreeMap<CategoryId, BTreeMap<CategoryId, u64>>,
    /// Phantom detections by predicted class.
    pub phantoms: BTreeMap<CategoryId, u64>,
}

fn bump<K: Ord>(map: &mut BTreeMap<K, u64>, k: K, n: u64) {
    *map.entry(k).or_insert(0) += n;
}

fn get<K: Ord>(map: &BTreeMap<K, u64>, k: &K) -> u64 {
    map.get(k).copied().unwrap_or(0)
}

impl ExpectedLedger {
    fn absorb(&mut self, other: ExpectedLedger) {
        for (k, v) in other.gt {
            bump(&mut self.gt, k, v);
        }
        for (k, v) in other.kept {
            bump(&mut self.kept, k, v);
        }
        for (k, v) in other.dropped {
            bump(&mut self.dropped, k, v);
        }
        for (p, row) in other.flips {
            for (t, v) in row {
                bump(self.flips.entry(p).or_default(), t, v);
            }
        }
        for (k, v) in other.phantoms {
            bump(&mut self.phantoms, k, v);
        }
    }

    fn sum(map: &BTreeMap<CategoryId, u64>) -> u64 {
        map.values().sum()
    }

    pub fn total_gt(&self) -> u64 {
        Self::sum(&self.gt)
    }

    pub fn total_kept(&self) -> u64 {
        Self::sum(&self.kept)
    }

    pub fn total_dropped(&self) -> u64 {
        Self::sum(&self.dropped)
    }

    pub fn total_phantoms(&self) -> u64 {
        Self::sum(&self.phantoms)
    }

    pub fn total_flips(&self) -> u64 {
        self.flips.values().flat_map(|r| r.values()).sum()
    }

    pub fn flips_of(&self, predicted: CategoryId, truth: CategoryId) -> u64 {
        self.flips.get(&predicted).map_or(0, |r| get(r, &truth))
    }

    /// Class-agnostic extended matrix that matching must reproduce when no
    /// jitter was applied.
    pub fn expected_matrix(&self, table: &CategoryTable, config: MatchConfig) -> Result<ExtendedConfusionMatrix> {
        let mut cm = ExtendedConfusionMatrix::empty(table, config);
        for (&c, &n) in &self.kept {
            cm.add(Some(c), Some(c), n)?;
        }
        for (&c, &n) in &self.dropped {
            cm.add(None, Some(c), n)?;
        }
        for (&p, row) in &self.flips {
            for (&t, &n) in row {
                cm.add(Some(p), Some(t), n)?;
            }
        }
        for (&c, &n) in &self.phantoms {
            cm.add(Some(c), None, n)?;
        }
        Ok(cm)
    }

    /// Classwise counts for `class`: a flipped detection is an FP of its
    /// predicted class and leaves its ground truth undetected.
    pub fn classwise_counts(&self, class: CategoryId) -> Counts {
        let flipped_from: u64 = self.flips.values().map(|r| get(r, &class)).sum();
        let flipped_to: u64 = self.flips.get(&class).map_or(0, |r| r.values().sum());
        Counts {
            tp: get(&self.kept, &class),
            fp: get(&self.phantoms, &class) + flipped_to,
            fn_: get(&self.dropped, &class) + flipped_from,
            tn: 0,
        }
    }
}

/// Apply `p` to perfect detections. Detections keep their index; phantoms are
/// appended after the largest one.
pub fn perturb(
    corpus: &Corpus,
    perfect: &DetectionSet,
    p: &PerturbationSpec,
) -> Result<(DetectionSet, ExpectedLedger)> {
    p.validate()?;
    let table = corpus.categories();
    let all_classes: Vec<CategoryId> = table.ids().collect();
    let per_image: Vec<(Vec<Detection>, Vec<(CategoryId, BinaryMask, f64)>, ExpectedLedger)> = corpus
        .images()
        .par_iter()
        .map(|img| {
            let mut rng = stream(p.seed, img.id);
            let mut ledger = ExpectedLedger::default();
            let gts: Vec<&Annotation> = corpus.annotations_for(img.id).collect();
            let mut out = Vec::new();
            for d in perfect.for_image(img.id) {
                let truth = d.category_id;
                bump(&mut ledger.gt, truth, 1);
                let drop_draw: f64 = rng.random();
                let flip_draw: f64 = rng.random();
                if drop_draw < p.drop_rate {
                    bump(&mut ledger.dropped, truth, 1);
                    continue;
                }
                let target = if flip_draw < p.flip_rate {
                    flip_target(truth, &p.flip_targets, &all_classes, &mut rng)
                } else {
                    None
                };
                let mask = jitter(d.mask(), p.jitter);
                let (category, score) = match target {
                    Some(t) => {
                        bump(ledger.flips.entry(t).or_default(), truth, 1);
                        (t, rng.random_range(0.0..=p.fp_score_max))
                    }
                    None => {
                        bump(&mut ledger.kept, truth, 1);
                        (truth, rng.random_range(p.tp_score_min..=1.0))
                    }
                };
                out.push(Detection {
                    image_id: img.id,
                    category_id: category,
                    shape: Shape::from_mask(mask),
                    score,
                    index: d.index,
                });
            }

            let mut phantoms = Vec::new();
            let expected = p.phantom_rate * gts.len() as f64;
            let mut n = expected.floor() as usize;
            if rng.random::<f64>() < expected - expected.floor() {
                n += 1;
            }
            if n > 0 {
                let occupied = gts.iter().try_fold(BinaryMask::empty(img.width, img.height)?, |acc, a| {
                    acc.union(a.mask())
                })?;
                for _ in 0..n {
                    let class = all_classes[rng.random_range(0..all_classes.len())];
                    let score = rng.random_range(0.0..=p.fp_score_max);
                    let placed = (0..200).find_map(|_| {
                        let m = random_shape(
                            ShapeFamily::Rectangle,
                            img.width,
                            img.height,
                            p.phantom_size.0,
                            p.phantom_size.1,
                            &mut rng,
                        );
                        (m.intersection_area(&occupied).ok() == Some(0)).then_some(m)
                    });
                    match placed {
                        Some(m) => {
                            bump(&mut ledger.phantoms, class, 1);
                            phantoms.push((class, m, score));
                        }
                        None => log::debug!("image {}: no free space for a phantom", img.id),
                    }
                }
            }
            Ok((out, phantoms, ledger))
        })
        .collect::<Result<_>>()?;

    let mut next_index = perfect.iter().map(|d| d.index + 1).max().unwrap_or(0);
    let mut dets = Vec::new();
    let mut ledger = ExpectedLedger::default();
    for (img, (kept, phantoms, part)) in corpus.images().iter().zip(per_image) {
        dets.extend(kept);
        for (category, mask, score) in phantoms {
            dets.push(Detection {
                image_id: img.id,
                category_id: category,
                shape: Shape::from_mask(mask),
                score,
                index: next_index,
            });
            next_index += 1;
        }
        ledger.absorb(part);
    }
    Ok((DetectionSet::new(dets), ledger))
}

fn flip_target(
    truth: CategoryId,
    weights: &[(CategoryId, f64)],
    all: &[CategoryId],
    rng: &mut ChaCha8Rng,
) -> Option<CategoryId> {
    let weighted: Vec<(CategoryId, f64)> = weights
        .iter()
        .copied()
        .filter(|&(c, w)| c != truth && w > 0.0)
        .collect();
    if !weighted.is_empty() {
        let dist = WeightedIndex::new(weighted.iter().map(|(_, w)| *w)).ok()?;
        return Some(weighted[dist.sample(rng)].0);
    }
    let others: Vec<CategoryId> = all.iter().copied().filter(|&c| c != truth).collect();
    if others.is_empty() {
        return None;
    }
    Some(others[rng.random_range(0..others.len())])
}

/// Dilate (`radius > 0`) or erode (`radius < 0`) with a square window.
/// Pixels outside the image count as background.
pub fn jitter(mask: &BinaryMask, radius: i32) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let src = mask.decode();
    let (w, h) = (src.width() as i64, src.height() as i64);
    let r = radius.unsigned_abs() as i64;
    let dilate = radius > 0;
    let mut out = Bitmap::new(src.width(), src.height()).expect("same size as source");
    for col in 0..w {
        for row in 0..h {
            let mut hit = !dilate;
            'window: for dc in -r..=r {
                for dr in -r..=r {
                    let (c, rr) = (col + dc, row + dr);
                    let v = c >= 0 && rr >= 0 && c < w && rr < h && src.get(c as u32, rr as u32);
                    if dilate && v {
                        hit = true;
                        break 'window;
                    }
                    if !dilate && !v {
                        hit = false;
                        break 'window;
                    }
                }
            }
            if hit {
                out.set(col as u32, row as u32, true);
            }
        }
    }
    BinaryMask::encode(&out)
}

/// Write `gt.json`, `splits.csv`, one `dets_<label>.json` per detection set
/// and `ledger_<label>.json` where a ledger is given.
pub fn write_scene(
    dir: &Path,
    corpus: &Corpus,
    sets: &[(String, DetectionSet, Option<ExpectedLedger>)],
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_ground_truth(corpus, &dir.join("gt.json"))?;
    let splits = dir.join("splits.csv");
    std::fs::write(&splits, corpus.split_manifest().render()).map_err(|e| Error::io(&splits, e))?;
    for (label, dets, ledger) in sets {
        write_detections(dets, &dir.join(format!("dets_{label}.json")))?;
        if let Some(ledger) = ledger {
            let path = dir.join(format!("ledger_{label}.json"));
            let text = serde_json::to_string_pretty(ledger).expect("ledger serializes") + "\n";
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}
