use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use super::sample::Split;
use crate::error::{Error, Result};
use crate::registry::{ClassCode, ClassRegistry};

/// Per-class inverse-frequency weights over the train split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingWeights {
    pub per_class_weight: BTreeMap<ClassCode, f64>,
    pub normalization: String,
}

impl SamplingWeights {
    pub fn from_counts(counts: &BTreeMap<ClassCode, usize>, registry: &ClassRegistry) -> Result<Self> {
        let empty: Vec<String> = counts
            .iter()
            .filter(|(_, &n)| n == 0)
            .map(|(c, _)| registry.name(*c).map_or_else(|_| c.to_string(), str::to_string))
            .collect();
        if !empty.is_empty() {
            return Err(Error::EmptyClasses(empty));
        }
        Ok(SamplingWeights {
            per_class_weight: counts.iter().map(|(c, &n)| (*c, 1.0 / n as f64)).collect(),
            normalization: "inverse_frequency".into(),
        })
    }

    pub fn weight(&self, code: ClassCode) -> Option<f64> {
        self.per_class_weight.get(&code).copied()
    }
}

/// Inverse-frequency weights for every class that appears in the manifest.
///
/// A class with samples but none in train is an error.
pub fn sampling_weights(manifest: &DatasetManifest) -> Result<SamplingWeights> {
    let mut counts: BTreeMap<ClassCode, usize> = BTreeMap::new();
    for s in manifest.samples() {
        let entry = counts.entry(s.class_code).or_default();
        if s.split == Some(Split::Train) {
            *entry += 1;
        }
    }
    SamplingWeights::from_counts(&counts, manifest.registry())
}

/// Draws item indices with replacement, each item weighted by its class weight.
#[derive(Clone, Debug)]
pub struct WeightedSampler {
    index: WeightedIndex<f64>,
    len: usize,
}

impl WeightedSampler {
    pub fn new(labels: &[ClassCode], weights: &SamplingWeights) -> Result<Self> {
        let per_item: Vec<f64> = labels
            .iter()
            .map(|c| {
                weights
                    .weight(*c)
                    .ok_or_else(|| Error::InvalidInput(format!("no sampling weight for class {c}")))
            })
            .collect::<Result<_>>()?;
        let index = WeightedIndex::new(&per_item)
            .map_err(|e| Error::InvalidInput(format!("cannot build weighted sampler: {e}")))?;
        Ok(WeightedSampler {
            index,
            len: labels.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.index.sample(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn counts(pairs: &[(u32, usize)]) -> BTreeMap<ClassCode, usize> {
        pairs.iter().map(|(c, n)| (ClassCode(*c), *n)).collect()
    }

    fn labels(c: &BTreeMap<ClassCode, usize>) -> Vec<ClassCode> {
        c.iter().flat_map(|(k, n)| std::iter::repeat_n(*k, *n)).collect()
    }

    #[test]
    fn two_classes_monte_carlo() {
        let reg = ClassRegistry::skin26();
        let c = counts(&[(0, 10), (1, 30)]);
        let w = SamplingWeights::from_counts(&c, &reg).unwrap();
        assert!((w.weight(ClassCode(0)).unwrap() - 0.1).abs() < 1e-12);
        assert!((w.weight(ClassCode(1)).unwrap() - 1.0 / 30.0).abs() < 1e-12);
        let labels = labels(&c);
        let sampler = WeightedSampler::new(&labels, &w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = sampler.draw(&mut rng, 100_000);
        let zeros = draws.iter().filter(|&&i| labels[i] == ClassCode(0)).count();
        let freq = zeros as f64 / 100_000.0;
        assert!((freq - 0.5).abs() < 0.02, "freq {freq}");
    }

    #[test]
    fn equal_counts_equal_weights() {
        let w = SamplingWeights::from_counts(&counts(&[(0, 4), (1, 4), (2, 4)]), &ClassRegistry::skin26())
            .unwrap();
        let vals: Vec<f64> = w.per_class_weight.values().copied().collect();
        assert!(vals.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn single_class_always_drawn() {
        let c = counts(&[(5, 3)]);
        let w = SamplingWeights::from_counts(&c, &ClassRegistry::skin26()).unwrap();
        let labels = labels(&c);
        let sampler = WeightedSampler::new(&labels, &w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sampler.draw(&mut rng, 100).iter().all(|&i| labels[i] == ClassCode(5)));
    }

    #[test]
    fn zero_train_class_is_named_in_error() {
        let err =
            SamplingWeights::from_counts(&counts(&[(0, 3), (1, 0)]), &ClassRegistry::skin26()).unwrap_err();
        match err {
            Error::EmptyClasses(names) => assert_eq!(names, vec!["Dermatofibroma".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
