//! Option-elimination inference.
//!
//! Each step rebuilds the prompt with the remaining options, scores them
//! and drops the `k` lowest (ties drop the higher class code first). Once
//! at most `k` options remain, the best-scoring one is returned (ties go to
//! the lower class code).

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::prompt::{build_prompt, Prompt, PromptSpec};
use super::TextClassifier;
use crate::error::{Error, Result};
use crate::registry::{ClassCode, ClassRegistry};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub k: usize,
    pub initial_options: Vec<ClassCode>,
}

impl ChainConfig {
    pub fn all_classes(k: usize, registry: &ClassRegistry) -> Self {
        ChainConfig {
            k,
            initial_options: registry.codes().collect(),
        }
    }

    pub fn validate(&self, registry: &ClassRegistry) -> Result<()> {
        let m = self.initial_options.len();
        if self.k == 0 || self.k >= m {
            return Err(Error::InvalidConfig(format!(
                "chain k = {} must satisfy 1 <= k < {m} options",
                self.k
            )));
        }
        let mut seen = BTreeSet::new();
        for &c in &self.initial_options {
            registry.check(c)?;
            if !seen.insert(c) {
                return Err(Error::InvalidConfig(format!("option {c} repeated")));
            }
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionScore {
    pub class_code: ClassCode,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Elimination {
    pub step: usize,
    /// Scores over the options remaining at the start of the step.
    pub scores: Vec<OptionScore>,
    pub removed: Vec<ClassCode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    /// `None` for single-shot classification.
    pub k: Option<usize>,
    pub initial: Vec<ClassCode>,
    pub remaining: Vec<ClassCode>,
    pub step: usize,
    pub eliminated: Vec<Elimination>,
    pub final_scores: Vec<OptionScore>,
    pub final_class: ClassCode,
}

fn by_score_desc(a: &OptionScore, b: &OptionScore) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.class_code.cmp(&b.class_code))
}

fn best(scores: &[OptionScore]) -> ClassCode {
    scores
        .iter()
        .min_by(|a, b| by_score_desc(a, b))
        .expect("nonempty scores")
        .class_code
}

/// The `k` options to drop: lowest score first, higher code first on ties.
fn worst(scores: &[OptionScore], k: usize) -> Vec<ClassCode> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| by_score_desc(b, a));
    sorted.into_iter().take(k).map(|s| s.class_code).collect()
}

impl ChainState {
    /// Re-derives every elimination and the final class from the recorded
    /// scores and checks the trace is consistent.
    pub fn replay(&self) -> Result<ClassCode> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("inconsistent chain trace: {m}")));
        let mut remaining: Vec<ClassCode> = self.initial.clone();
        for (i, e) in self.eliminated.iter().enumerate() {
            let Some(k) = self.k else {
                return bad("eliminations without k");
            };
            if e.step != i {
                return bad("step numbers out of order");
            }
            let scored: BTreeSet<_> = e.scores.iter().map(|s| s.class_code).collect();
            if scored != remaining.iter().copied().collect() {
                return bad("scores do not cover the remaining options");
            }
            if remaining.len() <= k || e.removed != worst(&e.scores, k) {
                return bad("elimination does not follow the scores");
            }
            remaining.retain(|c| !e.removed.contains(c));
        }
        if let Some(k) = self.k {
            if remaining.len() > k {
                return bad("stopped early");
            }
        }
        if remaining != self.remaining || self.step != self.eliminated.len() {
            return bad("remaining options differ");
        }
        let scored: Vec<_> = self.final_scores.iter().map(|s| s.class_code).collect();
        if scored != remaining {
            return bad("final scores do not match remaining options");
        }
        let winner = best(&self.final_scores);
        if winner != self.final_class {
            return bad("final class is not the best survivor");
        }
        Ok(winner)
    }

    pub fn schedule(&self) -> Vec<usize> {
        let mut sizes = vec![self.initial.len()];
        let mut n = self.initial.len();
        for e in &self.eliminated {
            n -= e.removed.len();
            sizes.push(n);
        }
        sizes
    }
}

/// Scores restricted to `remaining` and renormalized over it.
pub fn score_options<M: TextClassifier + ?Sized>(
    model: &M,
    prompt: &Prompt,
    remaining: &[ClassCode],
) -> Result<Vec<OptionScore>> {
    if remaining.is_empty() {
        return Err(Error::InvalidInput("no options to score".into()));
    }
    let full = model.class_scores(prompt)?;
    let raw: Vec<f64> = remaining
        .iter()
        .map(|c| {
            full.get(c.index())
                .copied()
                .map(|v| v.max(0.0))
                .ok_or(Error::UnknownCode(*c))
        })
        .collect::<Result<_>>()?;
    let total: f64 = raw.iter().sum();
    Ok(remaining
        .iter()
        .zip(raw)
        .map(|(&c, v)| OptionScore {
            class_code: c,
            score: if total > 0.0 {
                v / total
            } else {
                1.0 / remaining.len() as f64
            },
        })
        .collect())
}

fn options_prompt(narrative: &str, predictions: &[ClassCode], options: &[ClassCode], registry: &ClassRegistry) -> Result<Prompt> {
    let spec = if predictions.is_empty() {
        PromptSpec::implicit_options(options.to_vec())
    } else {
        PromptSpec::predictions_plus_options(predictions.to_vec(), options.to_vec())
    };
    build_prompt(narrative, &spec, registry)
}

/// Runs the elimination loop. With nonempty `predictions`, prompts carry
/// the image-model recommendations ahead of the options.
pub fn run_chain<M: TextClassifier + ?Sized>(
    model: &M,
    narrative: &str,
    predictions: &[ClassCode],
    config: &ChainConfig,
    registry: &ClassRegistry,
) -> Result<(ClassCode, ChainState)> {
    config.validate(registry)?;
    let k = config.k;
    let mut remaining = config.initial_options.clone();
    let mut eliminated = Vec::new();
    while remaining.len() > k {
        let prompt = options_prompt(narrative, predictions, &remaining, registry)?;
        let scores = score_options(model, &prompt, &remaining)?;
        let removed = worst(&scores, k);
        remaining.retain(|c| !removed.contains(c));
        eliminated.push(Elimination {
            step: eliminated.len(),
            scores,
            removed,
        });
    }
    let prompt = options_prompt(narrative, predictions, &remaining, registry)?;
    let final_scores = score_options(model, &prompt, &remaining)?;
    let final_class = best(&final_scores);
    Ok((
        final_class,
        ChainState {
            k: Some(k),
            initial: config.initial_options.clone(),
            step: eliminated.len(),
            remaining,
            eliminated,
            final_scores,
            final_class,
        },
    ))
}

/// Single-shot classification over `options`, traced as a chain with no
/// eliminations.
pub fn classify_direct<M: TextClassifier + ?Sized>(
    model: &M,
    narrative: &str,
    predictions: &[ClassCode],
    options: &[ClassCode],
    registry: &ClassRegistry,
) -> Result<(ClassCode, ChainState)> {
    let prompt = options_prompt(narrative, predictions, options, registry)?;
    let final_scores = score_options(model, &prompt, options)?;
    let final_class = best(&final_scores);
    Ok((
        final_class,
        ChainState {
            k: None,
            initial: options.to_vec(),
            remaining: options.to_vec(),
            step: 0,
            eliminated: Vec::new(),
            final_scores,
            final_class,
        },
    ))
}
