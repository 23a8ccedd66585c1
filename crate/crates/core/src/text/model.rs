//! Sequence classifiers with low-rank adapters.
//!
//! `tiny-bow` is a frozen two-layer network over hashed bag-of-words
//! features with rank-`r` adapters on both projections and a trainable
//! classification head. `stub-echo` has no parameters and ranks the listed
//! image predictions first. The 7B entries are parameter-accounting shapes
//! only.

use std::path::Path;

use candle_core::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::prompt::Prompt;
use super::tokenize::featurize;
use crate::error::{Error, Result};
use crate::io::{read_json, to_pretty_json, write_atomic, write_dir_atomic};
use crate::nn::{self, ParamGroup};
use crate::registry::ClassRegistry;
use crate::vision::GroupRole;

pub const ADAPTER_FILE: &str = "adapter.json";
pub const ADAPTER_WEIGHTS_FILE: &str = "adapter.safetensors";
/// Allowed excess of the trainable fraction over its target.
pub const FRACTION_TOLERANCE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub base_model_id: String,
    pub rank: usize,
    /// LoRA alpha; the adapter output is scaled by `alpha / rank`.
    pub alpha: f64,
    pub dropout: f64,
    pub trainable_fraction_target: f64,
}

impl AdapterConfig {
    pub fn for_base(base_model_id: &str) -> Result<Self> {
        let spec = lookup_text_base(base_model_id)?;
        Ok(AdapterConfig {
            base_model_id: base_model_id.to_string(),
            rank: spec.default_rank,
            alpha: 2.0 * spec.default_rank as f64,
            dropout: 0.05,
            trainable_fraction_target: 0.10,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("adapter rank must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(Error::InvalidConfig("adapter alpha must be positive".into()));
        }
        if !(self.trainable_fraction_target > 0.0 && self.trainable_fraction_target <= 1.0) {
            return Err(Error::InvalidConfig("trainable fraction target must be in (0, 1]".into()));
        }
        lookup_text_base(&self.base_model_id).map(|_| ())
    }

    fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Decoder-only transformer dimensions for parameter accounting.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TransformerShape {
    pub vocab: usize,
    pub hidden: usize,
    pub layers: usize,
    /// `(in, out)` of every adapted linear map in one block.
    pub linears: &'static [(usize, usize)],
    pub norm_params_per_layer: usize,
    pub final_norm_params: usize,
    pub tied_embeddings: bool,
}

impl TransformerShape {
    pub fn base_params(&self) -> usize {
        let block: usize = self.linears.iter().map(|(i, o)| i * o).sum::<usize>() + self.norm_params_per_layer;
        let embed = self.vocab * self.hidden;
        let lm_head = if self.tied_embeddings { 0 } else { embed };
        embed + self.layers * block + self.final_norm_params + lm_head
    }

    pub fn adapter_params(&self, rank: usize) -> usize {
        self.layers * self.linears.iter().map(|(i, o)| rank * (i + o)).sum::<usize>()
    }
}

const LLAMA_7B: TransformerShape = TransformerShape {
    vocab: 32000,
    hidden: 4096,
    layers: 32,
    linears: &[
        (4096, 4096),
        (4096, 4096),
        (4096, 4096),
        (4096, 4096),
        (4096, 11008),
        (4096, 11008),
        (11008, 4096),
    ],
    norm_params_per_layer: 2 * 4096,
    final_norm_params: 4096,
    tied_embeddings: false,
};

const MISTRAL_7B: TransformerShape = TransformerShape {
    vocab: 32000,
    hidden: 4096,
    layers: 32,
    linears: &[
        (4096, 4096),
        (4096, 1024),
        (4096, 1024),
        (4096, 4096),
        (4096, 14336),
        (4096, 14336),
        (14336, 4096),
    ],
    norm_params_per_layer: 2 * 4096,
    final_norm_params: 4096,
    tied_embeddings: false,
};

const FALCON_7B: TransformerShape = TransformerShape {
    vocab: 65024,
    hidden: 4544,
    layers: 32,
    linears: &[(4544, 4672), (4544, 4544), (4544, 18176), (18176, 4544)],
    norm_params_per_layer: 2 * 4544,
    final_norm_params: 2 * 4544,
    tied_embeddings: true,
};

#[derive(Copy, Clone, Debug, PartialEq)]
pub enum TextBaseKind {
    TinyBow,
    StubEcho,
    External(TransformerShape),
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct TextBaseSpec {
    pub id: &'static str,
    pub kind: TextBaseKind,
    pub default_rank: usize,
}

pub const TEXT_BASES: &[TextBaseSpec] = &[
    TextBaseSpec { id: "tiny-bow", kind: TextBaseKind::TinyBow, default_rank: 16 },
    TextBaseSpec { id: "stub-echo", kind: TextBaseKind::StubEcho, default_rank: 1 },
    TextBaseSpec { id: "llama-7b", kind: TextBaseKind::External(LLAMA_7B), default_rank: 256 },
    TextBaseSpec { id: "mistral-7b", kind: TextBaseKind::External(MISTRAL_7B), default_rank: 256 },
    TextBaseSpec { id: "falcon-7b", kind: TextBaseKind::External(FALCON_7B), default_rank: 256 },
];

pub fn lookup_text_base(id: &str) -> Result<&'static TextBaseSpec> {
    TEXT_BASES.iter().find(|b| b.id == id).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "unknown text base model {id:?}; known: {}",
            TEXT_BASES.iter().map(|b| b.id).collect::<Vec<_>>().join(", ")
        ))
    })
}

const BOW_BUCKETS: usize = 2048;
const BOW_HIDDEN: usize = 256;
const BOW_BASE_SEED: u64 = 0x7e47_b0e5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub base_params: usize,
    pub adapter_params: usize,
    pub head_params: usize,
    pub trainable_params: usize,
    pub total_params: usize,
    /// `trainable_params / total_params`, or 0 for a parameter-free model.
    pub trainable_fraction: f64,
}

impl ParamReport {
    fn new(base_params: usize, adapter_params: usize, head_params: usize) -> Self {
        let trainable_params = adapter_params + head_params;
        let total_params = base_params + trainable_params;
        ParamReport {
            base_params,
            adapter_params,
            head_params,
            trainable_params,
            total_params,
            trainable_fraction: if total_params == 0 {
                0.0
            } else {
                trainable_params as f64 / total_params as f64
            },
        }
    }
}

/// Parameter accounting for an adapter on any registered base.
pub fn adapter_report(adapter: &AdapterConfig, num_classes: usize) -> Result<ParamReport> {
    adapter.validate()?;
    let r = adapter.rank;
    Ok(match lookup_text_base(&adapter.base_model_id)?.kind {
        TextBaseKind::TinyBow => ParamReport::new(
            BOW_BUCKETS * BOW_HIDDEN + BOW_HIDDEN * BOW_HIDDEN,
            r * (BOW_BUCKETS + BOW_HIDDEN) + r * (2 * BOW_HIDDEN),
            BOW_HIDDEN * num_classes + num_classes,
        ),
        TextBaseKind::StubEcho => ParamReport::new(0, 0, 0),
        TextBaseKind::External(shape) => {
            ParamReport::new(shape.base_params(), shape.adapter_params(r), shape.hidden * num_classes)
        }
    })
}

#[derive(Clone, Debug)]
pub struct TinyBow {
    /// embed, proj, lora_embed, lora_proj, head.
    groups: Vec<ParamGroup>,
    scale: f64,
    dropout: f32,
}

impl TinyBow {
    fn new(adapter: &AdapterConfig, num_classes: usize, seed: u64) -> Result<Self> {
        let mut base_rng = ChaCha8Rng::seed_from_u64(BOW_BASE_SEED);
        let embed_bound = (3.0f32).sqrt();
        let proj_bound = (6.0 / BOW_HIDDEN as f32).sqrt();
        let mut embed = ParamGroup::new(
            "embed",
            GroupRole::FeatureExtractor,
            vec![("weight", nn::uniform(&mut base_rng, &[BOW_BUCKETS, BOW_HIDDEN], embed_bound)?)],
        )?;
        let mut proj = ParamGroup::new(
            "proj",
            GroupRole::FeatureExtractor,
            vec![("weight", nn::uniform(&mut base_rng, &[BOW_HIDDEN, BOW_HIDDEN], proj_bound)?)],
        )?;
        embed.frozen = true;
        proj.frozen = true;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = adapter.rank;
        let lora = |rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize| {
            ParamGroup::new(
                name,
                GroupRole::FeatureExtractor,
                vec![
                    ("a", nn::uniform(rng, &[fan_in, r], 1.0 / (fan_in as f32).sqrt())?),
                    ("b", nn::zeros(&[r, fan_out])?),
                ],
            )
        };
        let lora_embed = lora(&mut rng, "lora_embed", BOW_BUCKETS, BOW_HIDDEN)?;
        let lora_proj = lora(&mut rng, "lora_proj", BOW_HIDDEN, BOW_HIDDEN)?;
        let head_bound = 1.0 / (BOW_HIDDEN as f32).sqrt();
        let head = ParamGroup::new(
            "head",
            GroupRole::Head,
            vec![
                ("weight", nn::uniform(&mut rng, &[BOW_HIDDEN, num_classes], head_bound)?),
                ("bias", nn::zeros(&[num_classes])?),
            ],
        )?;
        Ok(TinyBow {
            groups: vec![embed, proj, lora_embed, lora_proj, head],
            scale: adapter.scale(),
            dropout: adapter.dropout as f32,
        })
    }

    fn adapted(&self, x: &Tensor, base: usize, lora: usize, train: bool) -> Result<Tensor> {
        let w = self.groups[base].tensor(0);
        let a = self.groups[lora].tensor(0);
        let b = self.groups[lora].tensor(1);
        let xa = if train && self.dropout > 0.0 {
            candle_nn::ops::dropout(x, self.dropout)?
        } else {
            x.clone()
        };
        Ok((x.matmul(&w)? + (xa.matmul(&a)?.matmul(&b)? * self.scale)?)?)
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.adapted(x, 0, 2, train)?.relu()?;
        let h = self.adapted(&h, 1, 3, train)?.relu()?;
        let head = &self.groups[4];
        Ok(h.matmul(&head.tensor(0))?.broadcast_add(&head.tensor(1))?)
    }
}

#[derive(Clone, Debug)]
pub enum TextNet {
    TinyBow(TinyBow),
    /// Listed predictions score `n - position + 1`, others 1, then
    /// normalized; without predictions every class scores equally.
    StubEcho { num_classes: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextCheckpointMeta {
    pub registry: ClassRegistry,
    pub adapter: AdapterConfig,
    pub init_seed: u64,
    pub params: ParamReport,
    #[serde(default)]
    pub training: Option<serde_json::Value>,
    #[serde(default)]
    pub history: Vec<super::finetune::TextEpochRecord>,
    #[serde(default)]
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TextModel {
    pub meta: TextCheckpointMeta,
    net: TextNet,
}

impl TextModel {
    /// Base model with a freshly initialized head and zero adapters.
    pub fn base(registry: ClassRegistry, adapter: AdapterConfig, seed: u64) -> Result<Self> {
        adapter.validate()?;
        let n = registry.len();
        let spec = lookup_text_base(&adapter.base_model_id)?;
        let net = match spec.kind {
            TextBaseKind::TinyBow => TextNet::TinyBow(TinyBow::new(&adapter, n, seed)?),
            TextBaseKind::StubEcho => TextNet::StubEcho { num_classes: n },
            TextBaseKind::External(_) => {
                return Err(Error::ModelUnavailable {
                    id: spec.id.to_string(),
                    instructions: format!(
                        "{} weights are not bundled and need a GPU runtime; use tiny-bow here, or report parameters with `adapter_report`",
                        spec.id
                    ),
                })
            }
        };
        let params = adapter_report(&adapter, n)?;
        Ok(TextModel {
            meta: TextCheckpointMeta {
                registry,
                adapter,
                init_seed: seed,
                params,
                training: None,
                history: Vec::new(),
                best_epoch: None,
            },
            net,
        })
    }

    pub fn registry(&self) -> &ClassRegistry {
        &self.meta.registry
    }

    pub fn id(&self) -> &str {
        &self.meta.adapter.base_model_id
    }

    pub fn net(&self) -> &TextNet {
        &self.net
    }

    pub(crate) fn groups(&self) -> &[ParamGroup] {
        match &self.net {
            TextNet::TinyBow(m) => &m.groups,
            TextNet::StubEcho { .. } => &[],
        }
    }

    pub(crate) fn adapter_tensors(&self) -> Result<std::collections::HashMap<String, Tensor>> {
        let trainable: Vec<ParamGroup> = self.groups().iter().filter(|g| !g.frozen).cloned().collect();
        nn::snapshot(&trainable)
    }

    pub fn features(texts: &[&str]) -> Result<Tensor> {
        let data: Vec<f32> = texts.iter().flat_map(|t| featurize(t, BOW_BUCKETS)).collect();
        Ok(Tensor::from_vec(data, (texts.len(), BOW_BUCKETS), &Device::Cpu)?)
    }

    pub(crate) fn logits(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        match &self.net {
            TextNet::TinyBow(m) => m.forward(x, train),
            TextNet::StubEcho { .. } => Err(Error::InvalidInput("stub model has no logits".into())),
        }
    }

    /// Class probabilities for each prompt.
    pub fn score_batch(&self, prompts: &[&Prompt]) -> Result<Vec<Vec<f64>>> {
        match &self.net {
            TextNet::StubEcho { num_classes } => Ok(prompts
                .iter()
                .map(|p| {
                    let preds = &p.spec.predictions;
                    let mut s = vec![1.0; *num_classes];
                    for (i, c) in preds.iter().enumerate() {
                        if let Some(v) = s.get_mut(c.index()) {
                            *v = (preds.len() - i + 1) as f64;
                        }
                    }
                    let total: f64 = s.iter().sum();
                    s.into_iter().map(|v| v / total).collect()
                })
                .collect()),
            TextNet::TinyBow(_) => {
                let mut out = Vec::with_capacity(prompts.len());
                for chunk in prompts.chunks(256) {
                    let texts: Vec<&str> = chunk.iter().map(|p| p.text.as_str()).collect();
                    out.extend(nn::softmax_rows(&self.logits(&Self::features(&texts)?, false)?)?);
                }
                Ok(out)
            }
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let json = to_pretty_json(&self.meta)?;
        let tensors = self.adapter_tensors()?;
        write_dir_atomic(dir, |tmp| {
            write_atomic(&tmp.join(ADAPTER_FILE), json.as_bytes())?;
            if !tensors.is_empty() {
                nn::save_tensors(&tmp.join(ADAPTER_WEIGHTS_FILE), &tensors)?;
            }
            Ok(())
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: TextCheckpointMeta = read_json(&dir.join(ADAPTER_FILE))?;
        let mut model = TextModel::base(meta.registry.clone(), meta.adapter.clone(), meta.init_seed)?;
        let trainable: Vec<ParamGroup> = model.groups().iter().filter(|g| !g.frozen).cloned().collect();
        if !trainable.is_empty() {
            let tensors = nn::load_tensors(&dir.join(ADAPTER_WEIGHTS_FILE))?;
            nn::restore(&trainable, &tensors, true)?;
        }
        model.meta = meta;
        Ok(model)
    }
}
