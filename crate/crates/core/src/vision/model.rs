//! Checkpoint bundles and inference for image classifiers.
//!
//! A checkpoint is a directory holding `checkpoint.json` (metadata) and
//! `weights.safetensors`. Parameter-free backbones have no weights file.

use std::path::Path;

use candle_core::Device;
use image::DynamicImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{build_augmentation, images_to_tensor, AugmentMode, AugmentationConfig, Augmenter};
use super::backbone::{BackboneConfig, VisionNet};
use super::freeze::FreezePlan;
use super::train::{EpochRecord, TrainConfig};
use crate::dataset::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::io::{read_json, to_pretty_json, write_atomic, write_dir_atomic};
use crate::metrics::PredictionSet;
use crate::nn;
use crate::registry::{ClassCode, ClassRegistry};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const WEIGHTS_FILE: &str = "weights.safetensors";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisionCheckpointMeta {
    pub registry: ClassRegistry,
    pub backbone: BackboneConfig,
    pub augmentation: AugmentationConfig,
    /// Seed used to build the initial weights.
    pub init_seed: u64,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub freeze: Option<FreezePlan>,
    #[serde(default)]
    pub history: Vec<EpochRecord>,
    /// Zero-based epoch whose weights were kept.
    #[serde(default)]
    pub best_epoch: Option<usize>,
}

/// A loaded image classifier.
#[derive(Clone, Debug)]
pub struct VisionModel {
    pub meta: VisionCheckpointMeta,
    net: VisionNet,
    eval: Augmenter,
}

impl VisionModel {
    pub fn new(meta: VisionCheckpointMeta, net: VisionNet) -> Result<Self> {
        if meta.backbone.num_classes != meta.registry.len() {
            return Err(Error::InvalidConfig(format!(
                "backbone has {} classes but registry has {}",
                meta.backbone.num_classes,
                meta.registry.len()
            )));
        }
        let eval = build_augmentation(&meta.augmentation, AugmentMode::Eval)?;
        Ok(VisionModel { meta, net, eval })
    }

    /// An untrained model (the stub backbone needs nothing else).
    pub fn fresh(registry: ClassRegistry, backbone: BackboneConfig, augmentation: AugmentationConfig, seed: u64) -> Result<Self> {
        let net = VisionNet::build(&backbone, seed)?;
        VisionModel::new(
            VisionCheckpointMeta {
                registry,
                backbone,
                augmentation,
                init_seed: seed,
                train: None,
                freeze: None,
                history: Vec::new(),
                best_epoch: None,
            },
            net,
        )
    }

    pub fn registry(&self) -> &ClassRegistry {
        &self.meta.registry
    }

    pub fn net(&self) -> &VisionNet {
        &self.net
    }

    pub fn id(&self) -> &str {
        &self.meta.backbone.architecture
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let json = to_pretty_json(&self.meta)?;
        let tensors = nn::snapshot(self.net.groups())?;
        write_dir_atomic(dir, |tmp| {
            write_atomic(&tmp.join(CHECKPOINT_FILE), json.as_bytes())?;
            if !tensors.is_empty() {
                nn::save_tensors(&tmp.join(WEIGHTS_FILE), &tensors)?;
            }
            Ok(())
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: VisionCheckpointMeta = read_json(&dir.join(CHECKPOINT_FILE))?;
        let net = VisionNet::build(&meta.backbone, meta.init_seed)?;
        if !net.groups().is_empty() {
            let tensors = nn::load_tensors(&dir.join(WEIGHTS_FILE))?;
            nn::restore(net.groups(), &tensors, true)?;
        }
        VisionModel::new(meta, net)
    }

    /// Class probabilities for each image, in input order.
    pub fn predict_scores(&self, images: &[DynamicImage]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let resized: Vec<_> = chunk
                .par_iter()
                .map(|img| self.eval.apply(img, &mut ChaCha8Rng::seed_from_u64(0)))
                .collect();
            let x = images_to_tensor(&resized, &Device::Cpu)?;
            out.extend(nn::softmax_rows(&self.net.forward(&x)?)?);
        }
        Ok(out)
    }

    pub fn predict_image(&self, image: &DynamicImage) -> Result<Vec<f64>> {
        Ok(self.predict_scores(std::slice::from_ref(image))?.remove(0))
    }
}

/// Top-`n` predictions for one image.
pub fn predict_topn(model: &VisionModel, sample_id: &str, image: &DynamicImage, n: usize) -> Result<PredictionSet> {
    PredictionSet::new(sample_id, model.predict_image(image)?, n)
}

/// Decodes an image file, mapping failures to an input error.
pub fn read_image(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

pub fn decode_image(bytes: &[u8]) -> Result<DynamicImage> {
    image::load_from_memory(bytes).map_err(|e| Error::InvalidInput(format!("unreadable image: {e}")))
}

/// One decoded image of a manifest split.
#[derive(Clone, Debug)]
pub struct LoadedImage {
    pub id: String,
    pub class_code: ClassCode,
    pub image: DynamicImage,
}

/// Decodes every image of `split`, in manifest order.
pub fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<LoadedImage>> {
    let samples: Vec<_> = manifest.split(split).collect();
    samples
        .par_iter()
        .map(|s| {
            Ok(LoadedImage {
                id: s.id.clone(),
                class_code: s.class_code,
                image: read_image(&manifest.image_path(s)?)?,
            })
        })
        .collect()
}
