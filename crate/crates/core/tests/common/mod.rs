//! Helpers shared by the integration tests: seeded generators and dense
//! per-pixel oracles that never touch run-length code.

#![allow(dead_code)]

use cytoeval::corpus::{CategoryId, Corpus};
use cytoeval::mask::{Bitmap, BinaryMask};
use cytoeval::matching::MatchConfig;
use cytoeval::synth::{self, ClassMix, OverlapPolicy, PerturbationSpec, Scene, SceneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Runs summing to `w * h` with run lengths drawn up to `max_run`; the first
/// (background) run is zero about a quarter of the time.
pub fn random_runs(rng: &mut ChaCha8Rng, w: u32, h: u32, max_run: u64) -> Vec<u64> {
    let total = w as u64 * h as u64;
    let mut runs = Vec::new();
    let mut left = total;
    if rng.random_range(0..4) == 0 {
        runs.push(0);
    }
    while left > 0 {
        let len = rng.random_range(1..=max_run.min(left));
        runs.push(len);
        left -= len;
    }
    runs
}

pub fn random_mask(rng: &mut ChaCha8Rng, w: u32, h: u32) -> BinaryMask {
    let total = w as u64 * h as u64;
    // log-uniform run scale: from salt-and-pepper to a few long runs
    let bits = 64 - total.leading_zeros();
    let max_run = 1u64 << rng.random_range(0..bits);
    BinaryMask::from_runs(w, h, random_runs(rng, w, h, max_run)).unwrap()
}

/// Pixels set at random with probability `p`.
pub fn random_bitmap(rng: &mut ChaCha8Rng, w: u32, h: u32, p: f64) -> Bitmap {
    let mut bm = Bitmap::new(w, h).unwrap();
    for c in 0..w {
        for r in 0..h {
            if rng.random::<f64>() < p {
                bm.set(c, r, true);
            }
        }
    }
    bm
}

pub fn dense_counts(a: &BinaryMask, b: &BinaryMask) -> (u64, u64) {
    let (da, db) = (a.decode(), b.decode());
    let mut inter = 0;
    let mut union = 0;
    for (x, y) in da.as_slice().iter().zip(db.as_slice()) {
        inter += (*x && *y) as u64;
        union += (*x || *y) as u64;
    }
    (inter, union)
}

pub fn dense_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (inter, union) = dense_counts(a, b);
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Textbook crossing-number test over pixel centers with vertices clamped to
/// the image.
pub fn pnpoly_raster(vertices: &[(f64, f64)], w: u32, h: u32) -> Bitmap {
    let v: Vec<(f64, f64)> = vertices
        .iter()
        .map(|&(x, y)| (x.clamp(0.0, w as f64), y.clamp(0.0, h as f64)))
        .collect();
    let mut bm = Bitmap::new(w, h).unwrap();
    for c in 0..w {
        for r in 0..h {
            let (px, py) = (c as f64 + 0.5, r as f64 + 0.5);
            let mut inside = false;
            let mut j = v.len() - 1;
            for i in 0..v.len() {
                let ((xi, yi), (xj, yj)) = (v[i], v[j]);
                if ((yi > py) != (yj > py)) && (px < (xj - xi) * (py - yi) / (yj - yi) + xi) {
                    inside = !inside;
                }
                j = i;
            }
            bm.set(c, r, inside);
        }
    }
    bm
}

pub fn random_polygon(rng: &mut ChaCha8Rng, span: f64) -> Vec<(f64, f64)> {
    let n = rng.random_range(3..=9);
    (0..n)
        .map(|_| (rng.random_range(0.0..span), rng.random_range(0.0..span)))
        .collect()
}

/// Disjoint rectangles with the default cytology class mix.
pub fn scene_spec(seed: u64, images: usize) -> SceneSpec {
    SceneSpec {
        images,
        width: 64,
        height: 64,
        mix: ClassMix::cytology(0, 8),
        min_size: 4,
        max_size: 12,
        overlap: OverlapPolicy::Disjoint,
        seed,
        ..SceneSpec::default()
    }
}

pub fn scene(seed: u64, images: usize) -> Scene {
    synth::generate(&scene_spec(seed, images)).unwrap()
}

pub fn perturbation(rng: &mut ChaCha8Rng, seed: u64) -> PerturbationSpec {
    PerturbationSpec {
        drop_rate: rng.random_range(0.0..0.5),
        phantom_rate: rng.random_range(0.0..0.6),
        flip_rate: rng.random_range(0.0..0.4),
        tp_score_min: rng.random_range(0.3..1.0),
        fp_score_max: rng.random_range(0.0..1.0),
        seed,
        ..PerturbationSpec::default()
    }
}

/// Matching with no score filter and no detection cap, so every perturbation
/// shows up in the outcome.
pub fn open_config(mode: cytoeval::matching::MatchMode) -> MatchConfig {
    MatchConfig::new(0.5, 0.0, mode).unwrap().with_max_detections(None)
}

pub fn gt_per_class(corpus: &Corpus) -> std::collections::BTreeMap<CategoryId, u64> {
    let mut m = std::collections::BTreeMap::new();
    for a in corpus.annotations() {
        *m.entry(a.category_id).or_insert(0) += 1;
    }
    m
}
