//! Training loop for image classifiers.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Instant;

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::augment::{build_augmentation, images_to_tensor, AugmentMode, AugmentationConfig};
use super::backbone::{freeze_parameters, BackboneConfig, VisionNet};
use super::freeze::GroupRole;
use super::model::{load_split, LoadedImage, VisionCheckpointMeta, VisionModel};
use crate::dataset::{sampling_weights, DatasetManifest, Split, WeightedSampler};
use crate::error::{Error, Result};
use crate::metrics::ScoreAccumulator;
use crate::nn;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Plain,
    Weighted,
}

/// Missing fields take their defaults when deserialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs_max: usize,
    /// Epochs without a val top-1 improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub sampler: SamplerKind,
    /// Draws per epoch in weighted mode; `None` means the train split size.
    #[serde(default)]
    pub samples_per_epoch: Option<usize>,
    /// Source of feature-extractor weights when the backbone is pretrained.
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_max: 100,
            patience: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
            sampler: SamplerKind::Weighted,
            samples_per_epoch: None,
            init_checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("weight decay must be nonnegative".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be positive".into()));
        }
        if self.samples_per_epoch == Some(0) {
            return Err(Error::InvalidConfig("samples per epoch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_top1: f64,
    /// Drawn samples per class code.
    pub class_histogram: Vec<usize>,
    pub elapsed_ms: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: VisionModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

fn epoch_order(
    cfg: &TrainConfig,
    n_train: usize,
    sampler: Option<&WeightedSampler>,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    match sampler {
        Some(s) => s.draw(rng, cfg.samples_per_epoch.unwrap_or(n_train)),
        None => {
            let mut idx: Vec<usize> = (0..n_train).collect();
            idx.shuffle(rng);
            idx
        }
    }
}

/// Mean cross-entropy and top-1 over a labelled set, in eval mode.
fn validate(model: &VisionModel, data: &[LoadedImage]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let images: Vec<_> = data.iter().map(|d| d.image.clone()).collect();
    let scores = model.predict_scores(&images)?;
    let mut acc = ScoreAccumulator::new(model.registry().len(), &[1]);
    let mut loss = 0.0;
    for (d, s) in data.iter().zip(&scores) {
        loss -= s[d.class_code.index()].max(1e-12).ln();
        acc.add(d.class_code, s)?;
    }
    Ok((loss / data.len() as f64, acc.finish().top1()))
}

fn load_pretrained(net: &VisionNet, cfg: &BackboneConfig, train: &TrainConfig) -> Result<()> {
    let Some(path) = &train.init_checkpoint else {
        return Err(Error::ModelUnavailable {
            id: cfg.architecture.clone(),
            instructions: "pretrained weights are not bundled; pass an init checkpoint of the same architecture".into(),
        });
    };
    let source = VisionModel::load(path)?;
    if source.meta.backbone.architecture != cfg.architecture {
        return Err(Error::InvalidConfig(format!(
            "init checkpoint is {}, expected {}",
            source.meta.backbone.architecture, cfg.architecture
        )));
    }
    let features: HashMap<String, Tensor> = nn::snapshot(
        &source
            .net()
            .groups()
            .iter()
            .filter(|g| g.role == GroupRole::FeatureExtractor)
            .cloned()
            .collect::<Vec<_>>(),
    )?;
    nn::restore(net.groups(), &features, false)
}

/// Trains on the train split, keeping the weights with the best val top-1.
pub fn train(
    manifest: &DatasetManifest,
    backbone: &BackboneConfig,
    aug: &AugmentationConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    backbone.validate()?;
    let registry = manifest.registry().clone();
    if backbone.num_classes != registry.len() {
        return Err(Error::InvalidConfig(format!(
            "backbone has {} classes but registry has {}",
            backbone.num_classes,
            registry.len()
        )));
    }
    let augmenter = build_augmentation(aug, AugmentMode::Train)?;
    let mut net = VisionNet::build(backbone, cfg.seed)?;
    if backbone.pretrained {
        load_pretrained(&net, backbone, cfg)?;
    }
    let plan = freeze_parameters(&mut net, backbone.freeze_fraction)?;
    let vars = nn::trainable_vars(net.groups());

    let train_set = load_split(manifest, Split::Train)?;
    let val_set = load_split(manifest, Split::Val)?;
    if train_set.is_empty() {
        return Err(Error::InvalidManifest("train split is empty".into()));
    }
    let sampler = match cfg.sampler {
        SamplerKind::Weighted => {
            let weights = sampling_weights(manifest)?;
            let labels: Vec<_> = train_set.iter().map(|d| d.class_code).collect();
            Some(WeightedSampler::new(&labels, &weights)?)
        }
        SamplerKind::Plain => None,
    };

    let meta = VisionCheckpointMeta {
        registry: registry.clone(),
        backbone: backbone.clone(),
        augmentation: aug.clone(),
        init_seed: cfg.seed,
        train: Some(cfg.clone()),
        freeze: Some(plan),
        history: Vec::new(),
        best_epoch: None,
    };
    let mut model = VisionModel::new(meta, net)?;
    let mut opt = AdamW::new(
        vars,
        ParamsAdamW {
            lr: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, HashMap<String, Tensor>)> = None;
    let start = Instant::now();
    for epoch in 0..cfg.epochs_max {
        let order = epoch_order(cfg, train_set.len(), sampler.as_ref(), &mut rng);
        let mut histogram = vec![0usize; registry.len()];
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let seeds: Vec<u64> = batch.iter().map(|_| rand::Rng::random(&mut rng)).collect();
            let images: Vec<_> = batch
                .par_iter()
                .zip(&seeds)
                .map(|(&i, &s)| augmenter.apply(&train_set[i].image, &mut ChaCha8Rng::seed_from_u64(s)))
                .collect();
            let labels: Vec<u32> = batch.iter().map(|&i| train_set[i].class_code.0).collect();
            for &l in &labels {
                histogram[l as usize] += 1;
            }
            let x = images_to_tensor(&images, &Device::Cpu)?;
            let y = Tensor::new(labels.as_slice(), &Device::Cpu)?;
            let logits = model.net().forward(&x)?;
            let loss = candle_nn::loss::cross_entropy(&logits, &y)?;
            opt.backward_step(&loss)?;
            loss_sum += f64::from(loss.to_scalar::<f32>()?) * batch.len() as f64;
            let preds: Vec<u32> = logits.argmax(1)?.to_vec1()?;
            correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        }
        let (val_loss, val_top1) = validate(&model, &val_set)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
            val_loss,
            val_top1,
            class_histogram: histogram,
            elapsed_ms: start.elapsed().as_millis() as u64,
        };
        info!(epoch, train_loss = record.train_loss, val_top1, "epoch done");
        history.push(record);
        if best.as_ref().is_none_or(|(_, b, _)| val_top1 > *b) {
            best = Some((epoch, val_top1, nn::snapshot(model.net().groups())?));
        } else if epoch - best.as_ref().map_or(0, |b| b.0) >= cfg.patience {
            break;
        }
    }
    let best_epoch = best.as_ref().map(|b| b.0);
    if let Some((_, _, weights)) = &best {
        nn::restore(model.net().groups(), weights, true)?;
    }
    model.meta.history = history.clone();
    model.meta.best_epoch = best_epoch;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}
