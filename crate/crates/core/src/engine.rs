//! Per-image work distribution over a bounded thread pool.
//!
//! Results come back in image-id order whatever the pool size, so every fold
//! over them is deterministic.

use rayon::prelude::*;

use crate::corpus::{Corpus, DetectionSet, ImageId, ImageRecord, Split};
use crate::error::{Error, Result};
use crate::matching::{match_image, DetObject, GtObject, MatchConfig, MatchOutcome};

/// Borrowed view of one image's ground truth and detections.
#[derive(Debug)]
pub struct ImageView<'a> {
    pub image: &'a ImageRecord,
    pub gts: Vec<GtObject<'a>>,
    pub dets: Vec<DetObject<'a>>,
}

impl<'a> ImageView<'a> {
    pub fn new(corpus: &'a Corpus, dets: &'a DetectionSet, image: &'a ImageRecord) -> Self {
        let gts = corpus
            .annotations_for(image.id)
            .map(|a| GtObject {
                id: a.id,
                category: a.category_id,
                mask: a.mask(),
            })
            .collect();
        let dets = dets
            .for_image(image.id)
            .iter()
            .map(|d| DetObject {
                index: d.index,
                category: d.category_id,
                score: d.score,
                mask: d.mask(),
            })
            .collect();
        ImageView { image, gts, dets }
    }
}

/// Build a pool with `workers` threads; 0 means one per available core.
pub fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Run `f` on every image of `split` (all images when `None`) and return the
/// results in image-id order. The first error in that order wins.
pub fn map_images<T, F>(
    corpus: &Corpus,
    dets: &DetectionSet,
    split: Option<Split>,
    workers: usize,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&ImageView<'_>) -> Result<T> + Sync,
{
    let images: Vec<&ImageRecord> = corpus.images_in(split).collect();
    let pool = pool(workers)?;
    let results: Vec<Result<T>> = pool.install(|| {
        images
            .par_iter()
            .map(|img| f(&ImageView::new(corpus, dets, img)))
            .collect()
    });
    results.into_iter().collect()
}

/// Match every image of `split` under `cfg`, by image id.
pub fn match_all(
    corpus: &Corpus,
    dets: &DetectionSet,
    cfg: &MatchConfig,
    split: Option<Split>,
    workers: usize,
) -> Result<Vec<(ImageId, MatchOutcome)>> {
    cfg.validate()?;
    map_images(corpus, dets, split, workers, |view| {
        Ok((view.image.id, match_image(&view.gts, &view.dets, cfg)?))
    })
}
