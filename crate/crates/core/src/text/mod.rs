//! Text classification: prompts, training examples, adapter fine-tuning
//! and option-elimination inference.

pub mod chain;
pub mod examples;
mod finetune;
pub mod model;
pub mod prompt;
pub mod tokenize;

pub use chain::{classify_direct, run_chain, score_options, ChainConfig, ChainState, Elimination, OptionScore};
pub use examples::{
    build_examples, make_chain_training_examples, make_prediction_augmented_example, ExampleSettings, Provenance,
    TextTrainExample, TextTrainMode,
};
pub use finetune::{evaluate_examples, finetune, FinetuneOutcome, FinetuneSettings, TextEpochRecord};
pub use model::{adapter_report, lookup_text_base, AdapterConfig, ParamReport, TextModel, TEXT_BASES};
pub use prompt::{build_prompt, parse_sections, Prompt, PromptMode, PromptSpec, PromptTemplates};

use crate::corpus::Narrative;
use crate::error::{Error, Result};
use crate::metrics::{argmax, evaluate_decisions, EvaluationReport};
use crate::registry::{ClassCode, ClassRegistry};

/// Anything that scores every registry class for a prompt.
pub trait TextClassifier: Send + Sync {
    fn registry(&self) -> &ClassRegistry;
    fn model_id(&self) -> &str;
    /// Nonnegative scores indexed by class code.
    fn class_scores(&self, prompt: &Prompt) -> Result<Vec<f64>>;
}

impl TextClassifier for TextModel {
    fn registry(&self) -> &ClassRegistry {
        TextModel::registry(self)
    }

    fn model_id(&self) -> &str {
        self.id()
    }

    fn class_scores(&self, prompt: &Prompt) -> Result<Vec<f64>> {
        Ok(self.score_batch(&[prompt])?.remove(0))
    }
}

/// Prompt-independent scores; handy as a test double.
#[derive(Clone, Debug)]
pub struct FixedScores {
    registry: ClassRegistry,
    scores: Vec<f64>,
}

impl FixedScores {
    pub fn new(registry: ClassRegistry, scores: Vec<f64>) -> Self {
        assert_eq!(registry.len(), scores.len(), "one score per class");
        FixedScores { registry, scores }
    }
}

impl TextClassifier for FixedScores {
    fn registry(&self) -> &ClassRegistry {
        &self.registry
    }

    fn model_id(&self) -> &str {
        "fixed-scores"
    }

    fn class_scores(&self, _prompt: &Prompt) -> Result<Vec<f64>> {
        Ok(self.scores.clone())
    }
}

/// Evaluates a text classifier on narratives, directly or through the chain.
pub fn evaluate_narratives<'a, M, I>(
    model: &M,
    narratives: I,
    mode: TextTrainMode,
    chain_k: Option<usize>,
) -> Result<EvaluationReport>
where
    M: TextClassifier + ?Sized,
    I: IntoIterator<Item = &'a Narrative>,
{
    let registry = model.registry();
    let all: Vec<_> = registry.codes().collect();
    let mut pairs = Vec::new();
    for n in narratives {
        let pred = match (mode, chain_k) {
            (_, Some(k)) => run_chain(model, &n.story, &[], &ChainConfig::all_classes(k, registry), registry)?.0,
            (TextTrainMode::Plain, None) => {
                let p = build_prompt(&n.story, &PromptSpec::plain(), registry)?;
                ClassCode::from_index(argmax(&model.class_scores(&p)?))
            }
            (TextTrainMode::Mapping, None) => {
                let p = build_prompt(&n.story, &PromptSpec::explicit_mapping(all.clone()), registry)?;
                ClassCode::from_index(argmax(&model.class_scores(&p)?))
            }
            (TextTrainMode::Options | TextTrainMode::Chain, None) => {
                classify_direct(model, &n.story, &[], &all, registry)?.0
            }
            (TextTrainMode::Pred { .. } | TextTrainMode::PredChain { .. }, None) => {
                return Err(Error::InvalidConfig(
                    "prediction modes need image predictions; use eval-fusion".into(),
                ))
            }
        };
        pairs.push((n.class_code, pred));
    }
    evaluate_decisions(registry.len(), pairs)
}
