//! Training examples for the text classifier.

use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::prompt::{build_prompt, PromptSpec};
use crate::corpus::Narrative;
use crate::error::{Error, Result};
use crate::registry::{ClassCode, ClassRegistry};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Plain,
    ChainSubset,
    PredictionAugmented,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextTrainExample {
    pub input_text: String,
    pub gold_class: ClassCode,
    pub provenance: Provenance,
    pub seed: u64,
    pub spec: PromptSpec,
}

/// `size - 1` distinct non-gold classes plus the gold class, shuffled.
fn option_subset(rng: &mut ChaCha8Rng, gold: ClassCode, n_classes: usize, size: usize) -> Vec<ClassCode> {
    let others: Vec<ClassCode> = (0..n_classes)
        .map(ClassCode::from_index)
        .filter(|&c| c != gold)
        .collect();
    let mut subset: Vec<ClassCode> = others.choose_multiple(rng, size - 1).copied().collect();
    subset.push(gold);
    subset.shuffle(rng);
    subset
}

/// `n` distinct predictions that contain the gold class with probability
/// `inclusion_prob`, at a uniformly random position.
fn noisy_predictions(
    rng: &mut ChaCha8Rng,
    gold: ClassCode,
    n_classes: usize,
    n: usize,
    inclusion_prob: f64,
) -> Vec<ClassCode> {
    let include = rng.random_bool(inclusion_prob);
    let others: Vec<ClassCode> = (0..n_classes)
        .map(ClassCode::from_index)
        .filter(|&c| c != gold)
        .collect();
    let take = if include { n - 1 } else { n };
    let mut preds: Vec<ClassCode> = others.choose_multiple(rng, take).copied().collect();
    preds.shuffle(rng);
    if include {
        let pos = rng.random_range(0..=preds.len());
        preds.insert(pos, gold);
    }
    preds
}

fn check_size_range(size_range: (usize, usize), registry: &ClassRegistry) -> Result<()> {
    let (lo, hi) = size_range;
    if lo < 2 || lo > hi || hi > registry.len() {
        return Err(Error::InvalidConfig(format!(
            "size range [{lo}, {hi}] must lie within [2, {}]",
            registry.len()
        )));
    }
    Ok(())
}

fn check_predictions(n: usize, inclusion_prob: f64, registry: &ClassRegistry) -> Result<()> {
    if n == 0 || n >= registry.len() {
        return Err(Error::InvalidConfig(format!(
            "prediction count {n} must be in 1..{}",
            registry.len()
        )));
    }
    if !(0.0..=1.0).contains(&inclusion_prob) {
        return Err(Error::InvalidConfig(format!("inclusion probability {inclusion_prob} not in [0, 1]")));
    }
    Ok(())
}

/// Option-list examples whose subsets always contain the gold class.
pub fn make_chain_training_examples(
    narrative: &str,
    gold_class: ClassCode,
    registry: &ClassRegistry,
    count: usize,
    size_range: (usize, usize),
    rng_seed: u64,
) -> Result<Vec<TextTrainExample>> {
    registry.check(gold_class)?;
    check_size_range(size_range, registry)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    (0..count)
        .map(|_| {
            let size = rng.random_range(size_range.0..=size_range.1);
            let spec = PromptSpec::implicit_options(option_subset(&mut rng, gold_class, registry.len(), size));
            Ok(TextTrainExample {
                input_text: build_prompt(narrative, &spec, registry)?.text,
                gold_class,
                provenance: Provenance::ChainSubset,
                seed: rng_seed,
                spec,
            })
        })
        .collect()
}

/// One example with `n` image-model recommendations and the full options
/// list appended.
pub fn make_prediction_augmented_example(
    narrative: &str,
    gold_class: ClassCode,
    n: usize,
    inclusion_prob: f64,
    registry: &ClassRegistry,
    rng_seed: u64,
) -> Result<TextTrainExample> {
    registry.check(gold_class)?;
    check_predictions(n, inclusion_prob, registry)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let preds = noisy_predictions(&mut rng, gold_class, registry.len(), n, inclusion_prob);
    let spec = PromptSpec::predictions_plus_options(preds, registry.codes().collect());
    Ok(TextTrainExample {
        input_text: build_prompt(narrative, &spec, registry)?.text,
        gold_class,
        provenance: Provenance::PredictionAugmented,
        seed: rng_seed,
        spec,
    })
}

/// How training prompts are built from narratives.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TextTrainMode {
    Plain,
    Mapping,
    Options,
    Chain,
    /// Noisy top-`n` predictions plus the full options list.
    Pred { n: usize },
    /// Noisy top-`n` predictions plus a random gold-containing subset.
    PredChain { n: usize },
}

impl fmt::Display for TextTrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TextTrainMode::Plain => write!(f, "plain"),
            TextTrainMode::Mapping => write!(f, "mapping"),
            TextTrainMode::Options => write!(f, "options"),
            TextTrainMode::Chain => write!(f, "chain"),
            TextTrainMode::Pred { n } => write!(f, "pred-{n}"),
            TextTrainMode::PredChain { n } => write!(f, "pred-{n}-chain"),
        }
    }
}

impl FromStr for TextTrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown text mode {s:?}"));
        Ok(match s {
            "plain" => TextTrainMode::Plain,
            "mapping" => TextTrainMode::Mapping,
            "options" => TextTrainMode::Options,
            "chain" => TextTrainMode::Chain,
            _ => {
                let rest = s.strip_prefix("pred-").ok_or_else(bad)?;
                let (num, chain) = match rest.strip_suffix("-chain") {
                    Some(num) => (num, true),
                    None => (rest, false),
                };
                let n: usize = num.parse().map_err(|_| bad())?;
                if chain {
                    TextTrainMode::PredChain { n }
                } else {
                    TextTrainMode::Pred { n }
                }
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleSettings {
    pub mode: TextTrainMode,
    /// Examples per narrative for the randomized modes.
    pub per_narrative: usize,
    pub inclusion_prob: f64,
    pub seed: u64,
}

impl ExampleSettings {
    pub fn new(mode: TextTrainMode) -> Self {
        ExampleSettings {
            mode,
            per_narrative: 8,
            inclusion_prob: 1.0,
            seed: 0,
        }
    }
}

/// Builds the examples for a list of narratives under one mode.
pub fn build_examples<'a, I>(narratives: I, registry: &ClassRegistry, settings: &ExampleSettings) -> Result<Vec<TextTrainExample>>
where
    I: IntoIterator<Item = &'a Narrative>,
{
    let mut master = ChaCha8Rng::seed_from_u64(settings.seed);
    let all: Vec<ClassCode> = registry.codes().collect();
    let n_classes = registry.len();
    let mut out = Vec::new();
    for nar in narratives {
        let gold = registry.check(nar.class_code)?;
        let fixed = |spec: PromptSpec| -> Result<TextTrainExample> {
            Ok(TextTrainExample {
                input_text: build_prompt(&nar.story, &spec, registry)?.text,
                gold_class: gold,
                provenance: Provenance::Plain,
                seed: settings.seed,
                spec,
            })
        };
        match settings.mode {
            TextTrainMode::Plain => out.push(fixed(PromptSpec::plain())?),
            TextTrainMode::Mapping => out.push(fixed(PromptSpec::explicit_mapping(all.clone()))?),
            TextTrainMode::Options => out.push(fixed(PromptSpec::implicit_options(all.clone()))?),
            TextTrainMode::Chain => out.extend(make_chain_training_examples(
                &nar.story,
                gold,
                registry,
                settings.per_narrative,
                (2, n_classes),
                master.random(),
            )?),
            TextTrainMode::Pred { n } => {
                for _ in 0..settings.per_narrative {
                    out.push(make_prediction_augmented_example(
                        &nar.story,
                        gold,
                        n,
                        settings.inclusion_prob,
                        registry,
                        master.random(),
                    )?);
                }
            }
            TextTrainMode::PredChain { n } => {
                check_predictions(n, settings.inclusion_prob, registry)?;
                for _ in 0..settings.per_narrative {
                    let seed: u64 = master.random();
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let preds = noisy_predictions(&mut rng, gold, n_classes, n, settings.inclusion_prob);
                    let size = rng.random_range(2..=n_classes);
                    let spec = PromptSpec::predictions_plus_options(preds, option_subset(&mut rng, gold, n_classes, size));
                    out.push(TextTrainExample {
                        input_text: build_prompt(&nar.story, &spec, registry)?.text,
                        gold_class: gold,
                        provenance: Provenance::PredictionAugmented,
                        seed,
                        spec,
                    });
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_range_gives_every_class() {
        let r = ClassRegistry::skin26();
        let ex = make_chain_training_examples("x", ClassCode(4), &r, 5, (26, 26), 1).unwrap();
        for e in ex {
            let mut o = e.spec.options.clone();
            o.sort();
            assert_eq!(o, r.codes().collect::<Vec<_>>());
        }
    }

    #[test]
    fn chain_examples_are_seeded() {
        let r = ClassRegistry::skin26();
        let a = make_chain_training_examples("x", ClassCode(4), &r, 5, (2, 10), 9).unwrap();
        let b = make_chain_training_examples("x", ClassCode(4), &r, 5, (2, 10), 9).unwrap();
        assert_eq!(a, b);
        assert!(make_chain_training_examples("x", ClassCode(4), &r, 5, (1, 10), 9).is_err());
        assert!(make_chain_training_examples("x", ClassCode(4), &r, 5, (2, 27), 9).is_err());
    }

    #[test]
    fn inclusion_extremes() {
        let r = ClassRegistry::skin26();
        for seed in 0..200 {
            let inc = make_prediction_augmented_example("x", ClassCode(3), 5, 1.0, &r, seed).unwrap();
            assert!(inc.spec.predictions.contains(&ClassCode(3)));
            let exc = make_prediction_augmented_example("x", ClassCode(3), 5, 0.0, &r, seed).unwrap();
            assert!(!exc.spec.predictions.contains(&ClassCode(3)));
            assert_eq!(exc.spec.predictions.len(), 5);
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for s in ["plain", "mapping", "options", "chain", "pred-3", "pred-5-chain"] {
            assert_eq!(s.parse::<TextTrainMode>().unwrap().to_string(), s);
        }
        assert!("pred-x".parse::<TextTrainMode>().is_err());
    }
}
