use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sample::{ImageSample, Split};
use crate::error::{Error, Result};
use crate::registry::ClassCode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.8,
            seed: 0,
            stratified: true,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// `round(fraction * n)` with ties rounded up.
pub fn rounded_share(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 0.5 + 1e-9).floor() as usize
}

/// Seeded RNG whose stream is keyed by `stream`, so per-class shuffles are
/// independent of each other and of class iteration order.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug)]
pub struct SplitOutcome {
    pub samples: Vec<ImageSample>,
    /// Classes with fewer than two samples, placed entirely in train.
    pub warnings: Vec<String>,
}

/// Assigns every sample to train or val.
///
/// Stratified mode shuffles each class with its own seeded stream and puts
/// `round(train_fraction * class_count)` samples in train. Classes with a
/// single sample go to train with a warning. Input order is preserved.
pub fn assign_splits(samples: Vec<ImageSample>, config: &SplitConfig) -> Result<SplitOutcome> {
    config.validate()?;
    let mut samples = samples;
    let mut warnings = Vec::new();

    let mut groups: BTreeMap<Option<ClassCode>, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let key = config.stratified.then_some(s.class_code);
        groups.entry(key).or_default().push(i);
    }

    for (key, mut indices) in groups {
        indices.sort_by(|&a, &b| samples[a].id.cmp(&samples[b].id));
        if let Some(code) = key {
            if indices.len() < 2 {
                warnings.push(format!(
                    "class {code} has {} sample(s); all placed in train",
                    indices.len()
                ));
                for &i in &indices {
                    samples[i].split = Some(Split::Train);
                }
                continue;
            }
        }
        let stream = key.map_or(0, |c| u64::from(c.0) + 1);
        indices.shuffle(&mut stream_rng(config.seed, stream));
        let n_train = rounded_share(config.train_fraction, indices.len());
        for (pos, &i) in indices.iter().enumerate() {
            samples[i].split = Some(if pos < n_train { Split::Train } else { Split::Val });
        }
    }
    Ok(SplitOutcome { samples, warnings })
}
