use std::collections::HashMap;

use image::imageops::FilterType;
use image::DynamicImage;
use serde::{Deserialize, Serialize};

use super::sample::{ContentHash, ImageSample};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Duplicate {
    pub sample: ImageSample,
    /// Id of the sample that was kept in its place.
    pub kept_id: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DedupOutcome {
    pub kept: Vec<ImageSample>,
    pub removed: Vec<Duplicate>,
}

fn sorted(samples: Vec<ImageSample>) -> Vec<ImageSample> {
    let mut samples = samples;
    samples.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
    samples
}

/// Exact-content deduplication.
///
/// Samples are ordered by `(source_id, relative_path)` and the first sample
/// carrying each content hash is kept.
pub fn dedup(samples: Vec<ImageSample>) -> DedupOutcome {
    let mut seen: HashMap<ContentHash, String> = HashMap::new();
    let mut out = DedupOutcome::default();
    for sample in sorted(samples) {
        match seen.get(&sample.content_hash) {
            Some(kept_id) => out.removed.push(Duplicate {
                kept_id: kept_id.clone(),
                sample,
            }),
            None => {
                seen.insert(sample.content_hash, sample.id.clone());
                out.kept.push(sample);
            }
        }
    }
    out
}

/// 64-bit difference hash over a 9x8 grayscale thumbnail.
pub fn difference_hash(image: &DynamicImage) -> u64 {
    let small = image.resize_exact(9, 8, FilterType::Triangle).to_luma8();
    let mut hash = 0u64;
    for y in 0..8 {
        for x in 0..8 {
            let left = small.get_pixel(x, y)[0];
            let right = small.get_pixel(x + 1, y)[0];
            hash = (hash << 1) | u64::from(left > right);
        }
    }
    hash
}

/// Optional near-duplicate pass over perceptual hashes.
///
/// A sample is removed when its hash is within `max_distance` bits of an
/// already kept sample. Samples without a perceptual hash are always kept.
/// This pass is quadratic in the number of kept samples.
pub fn dedup_perceptual(samples: Vec<ImageSample>, max_distance: u32) -> DedupOutcome {
    let mut out = DedupOutcome::default();
    let mut kept_hashes: Vec<(u64, String)> = Vec::new();
    for sample in sorted(samples) {
        let Some(h) = sample.perceptual_hash else {
            out.kept.push(sample);
            continue;
        };
        if let Some((_, id)) = kept_hashes
            .iter()
            .find(|(k, _)| (k ^ h).count_ones() <= max_distance)
        {
            out.removed.push(Duplicate {
                kept_id: id.clone(),
                sample,
            });
        } else {
            kept_hashes.push((h, sample.id.clone()));
            out.kept.push(sample);
        }
    }
    out
}
