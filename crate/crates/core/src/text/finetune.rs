//! Adapter fine-tuning and plain text evaluation.

use std::collections::{BTreeSet, HashMap};

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::examples::TextTrainExample;
use super::prompt::{parse_sections, Prompt};
use super::model::{adapter_report, AdapterConfig, TextModel, FRACTION_TOLERANCE};
use crate::error::{Error, Result};
use crate::metrics::{EvaluationReport, ScoreAccumulator};
use crate::nn;
use crate::registry::ClassRegistry;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSettings {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        FinetuneSettings {
            epochs: 30,
            patience: 10,
            batch_size: 16,
            learning_rate: 5e-3,
            weight_decay: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextEpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub model: TextModel,
    pub history: Vec<TextEpochRecord>,
    pub best_epoch: Option<usize>,
}

fn scores_for(model: &TextModel, examples: &[TextTrainExample]) -> Result<Vec<Vec<f64>>> {
    let prompts: Vec<Prompt> = examples
        .iter()
        .map(|e| Prompt {
            text: e.input_text.clone(),
            spec: e.spec.clone(),
            sections: parse_sections(&e.input_text),
        })
        .collect();
    model.score_batch(&prompts.iter().collect::<Vec<_>>())
}

/// Full-class top-k report over examples.
pub fn evaluate_examples(model: &TextModel, examples: &[TextTrainExample], ks: &[usize]) -> Result<EvaluationReport> {
    let scores = scores_for(model, examples)?;
    let mut acc = ScoreAccumulator::new(model.registry().len(), ks);
    for (e, s) in examples.iter().zip(&scores) {
        acc.add(e.gold_class, s)?;
    }
    Ok(acc.finish())
}

fn check_classes(registry: &ClassRegistry, train: &[TextTrainExample]) -> Result<()> {
    let present: BTreeSet<_> = train.iter().map(|e| e.gold_class).collect();
    for e in train {
        registry.check(e.gold_class)?;
    }
    let missing: Vec<String> = registry
        .entries()
        .iter()
        .filter(|e| !present.contains(&e.code))
        .map(|e| e.name.clone())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::EmptyClasses(missing))
    }
}

/// Trains adapters and head; keeps the epoch with the best val accuracy.
pub fn finetune(
    registry: &ClassRegistry,
    train: &[TextTrainExample],
    val: &[TextTrainExample],
    adapter: &AdapterConfig,
    settings: &FinetuneSettings,
) -> Result<FinetuneOutcome> {
    if train.is_empty() {
        return Err(Error::InvalidInput("no training examples".into()));
    }
    if settings.batch_size == 0 || settings.learning_rate.is_nan() || settings.learning_rate <= 0.0 || settings.patience == 0 {
        return Err(Error::InvalidConfig("batch size, learning rate and patience must be positive".into()));
    }
    check_classes(registry, train)?;
    let report = adapter_report(adapter, registry.len())?;
    if report.trainable_fraction > adapter.trainable_fraction_target + FRACTION_TOLERANCE {
        return Err(Error::InvalidConfig(format!(
            "trainable fraction {:.4} exceeds target {:.4}; lower the rank",
            report.trainable_fraction, adapter.trainable_fraction_target
        )));
    }
    let mut model = TextModel::base(registry.clone(), adapter.clone(), settings.seed)?;
    let vars = nn::trainable_vars(model.groups());
    if vars.is_empty() && settings.epochs > 0 {
        return Err(Error::InvalidConfig(format!("{} has no trainable parameters", adapter.base_model_id)));
    }
    model.meta.training = Some(serde_json::to_value(settings)?);

    let texts: Vec<&str> = train.iter().map(|e| e.input_text.as_str()).collect();
    let labels: Vec<u32> = train.iter().map(|e| e.gold_class.0).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, HashMap<String, Tensor>)> = None;
    if settings.epochs > 0 {
        let x_all = TextModel::features(&texts)?;
        let mut opt = AdamW::new(
            vars,
            ParamsAdamW {
                lr: settings.learning_rate,
                weight_decay: settings.weight_decay,
                ..Default::default()
            },
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        for epoch in 0..settings.epochs {
            let mut order: Vec<u32> = (0..train.len() as u32).collect();
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for batch in order.chunks(settings.batch_size) {
                let idx = Tensor::new(batch, &Device::Cpu)?;
                let x = x_all.index_select(&idx, 0)?;
                let y: Vec<u32> = batch.iter().map(|&i| labels[i as usize]).collect();
                let y = Tensor::new(y.as_slice(), &Device::Cpu)?;
                let loss = candle_nn::loss::cross_entropy(&model.logits(&x, true)?, &y)?;
                opt.backward_step(&loss)?;
                loss_sum += f64::from(loss.to_scalar::<f32>()?) * batch.len() as f64;
            }
            let val_accuracy = if val.is_empty() {
                0.0
            } else {
                evaluate_examples(&model, val, &[1])?.top1()
            };
            info!(epoch, val_accuracy, "text epoch done");
            history.push(TextEpochRecord {
                epoch,
                train_loss: loss_sum / train.len() as f64,
                val_accuracy,
            });
            if best.as_ref().is_none_or(|(_, b, _)| val_accuracy > *b) {
                best = Some((epoch, val_accuracy, model.adapter_tensors()?));
            } else if epoch - best.as_ref().map_or(0, |b| b.0) >= settings.patience {
                break;
            }
        }
    }
    let best_epoch = best.as_ref().map(|b| b.0);
    if let Some((_, _, weights)) = &best {
        nn::restore(model.groups(), weights, false)?;
    }
    model.meta.history = history.clone();
    model.meta.best_epoch = best_epoch;
    Ok(FinetuneOutcome {
        model,
        history,
        best_epoch,
    })
}
