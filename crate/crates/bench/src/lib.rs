//! Fixtures shared by the benchmarks.

use dermafuse::dataset::{ContentHash, ImageSample};
use dermafuse::ClassCode;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `n` samples over `classes` classes; every `dup_every`-th one repeats the
/// bytes of its predecessor.
pub fn samples(n: usize, classes: usize, dup_every: usize) -> Vec<ImageSample> {
    (0..n)
        .map(|i| {
            let key = if dup_every > 0 && i % dup_every == dup_every - 1 { i - 1 } else { i };
            let rel = format!("c{}/img{i:06}.png", i % classes);
            ImageSample {
                id: ImageSample::make_id("bench", &rel),
                source_id: "bench".into(),
                relative_path: rel,
                class_code: ClassCode::from_index(i % classes),
                content_hash: ContentHash::of_bytes(&(key as u64).to_le_bytes()),
                width: 64,
                height: 64,
                perceptual_hash: None,
                split: None,
            }
        })
        .collect()
}

/// Random score rows with gold labels.
pub fn score_rows(n: usize, classes: usize, seed: u64) -> Vec<(ClassCode, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let gold = ClassCode::from_index(rng.random_range(0..classes));
            (gold, (0..classes).map(|_| rng.random::<f64>()).collect())
        })
        .collect()
}
