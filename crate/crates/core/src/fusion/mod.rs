//! Image predictions feeding the text model: single diagnoses, paired
//! evaluation and the HTTP service.

mod config;
mod service;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use image::DynamicImage;
use rand::seq::IndexedRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{load_models, ServiceConfig, ServiceLimits};
pub use service::{build_router, error_body, serve, AppState};

use crate::corpus::NarrativeCorpus;
use crate::dataset::{stream_rng, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_decisions, EvaluationReport, PredictionSet};
use crate::registry::{ClassCode, ClassRegistry};
use crate::text::{classify_direct, run_chain, ChainConfig, ChainState, TextClassifier};
use crate::vision::{load_split, VisionModel};

/// Anything that scores every registry class for an image.
pub trait ImageClassifier: Send + Sync {
    fn registry(&self) -> &ClassRegistry;
    fn model_id(&self) -> &str;
    /// Class probabilities indexed by class code.
    fn image_scores(&self, image: &DynamicImage) -> Result<Vec<f64>>;

    fn batch_scores(&self, images: &[DynamicImage]) -> Result<Vec<Vec<f64>>> {
        images.iter().map(|i| self.image_scores(i)).collect()
    }
}

impl ImageClassifier for VisionModel {
    fn registry(&self) -> &ClassRegistry {
        VisionModel::registry(self)
    }

    fn model_id(&self) -> &str {
        self.id()
    }

    fn image_scores(&self, image: &DynamicImage) -> Result<Vec<f64>> {
        self.predict_image(image)
    }

    fn batch_scores(&self, images: &[DynamicImage]) -> Result<Vec<Vec<f64>>> {
        self.predict_scores(images)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ChainMode {
    /// One classification over all classes.
    Direct,
    Chain { k: usize },
}

impl fmt::Display for ChainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainMode::Direct => write!(f, "direct"),
            ChainMode::Chain { k } => write!(f, "{k}"),
        }
    }
}

impl FromStr for ChainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("direct") {
            return Ok(ChainMode::Direct);
        }
        s.parse()
            .map(|k| ChainMode::Chain { k })
            .map_err(|_| Error::InvalidInput(format!("chain mode must be \"direct\" or a positive integer, got {s:?}")))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnoseOptions {
    pub top_n: usize,
    pub chain: ChainMode,
}

impl DiagnoseOptions {
    pub fn validate(&self, registry: &ClassRegistry) -> Result<()> {
        if self.top_n == 0 || self.top_n > registry.len() {
            return Err(Error::InvalidInput(format!(
                "top_n must be in 1..={}, got {}",
                registry.len(),
                self.top_n
            )));
        }
        if let ChainMode::Chain { k } = self.chain {
            if k == 0 || k >= registry.len() {
                return Err(Error::InvalidInput(format!(
                    "k must be in 1..{}, got {k}",
                    registry.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub vision_ms: f64,
    pub text_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisResult {
    pub final_class: ClassCode,
    pub final_class_name: String,
    pub mode: ChainMode,
    pub image_topn: PredictionSet,
    pub chain_trace: ChainState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

fn check_models(vision: &dyn ImageClassifier, text: &dyn TextClassifier) -> Result<()> {
    vision.registry().ensure_matches(text.registry())
}

/// Text stage given image scores already computed.
pub fn diagnose_from_scores(
    text: &dyn TextClassifier,
    sample_id: &str,
    image_scores: Vec<f64>,
    narrative: &str,
    options: &DiagnoseOptions,
) -> Result<DiagnosisResult> {
    let registry = text.registry();
    options.validate(registry)?;
    if narrative.trim().is_empty() {
        return Err(Error::InvalidInput("narrative is empty".into()));
    }
    let image_topn = PredictionSet::new(sample_id, image_scores, options.top_n)?;
    let predictions = image_topn.codes();
    let all: Vec<ClassCode> = registry.codes().collect();
    let (final_class, chain_trace) = match options.chain {
        ChainMode::Direct => classify_direct(text, narrative, &predictions, &all, registry)?,
        ChainMode::Chain { k } => run_chain(text, narrative, &predictions, &ChainConfig { k, initial_options: all }, registry)?,
    };
    Ok(DiagnosisResult {
        final_class,
        final_class_name: registry.name(final_class)?.to_string(),
        mode: options.chain,
        image_topn,
        chain_trace,
        timings: None,
    })
}

/// Image first, then the prompt with its top-N, then the text model.
pub fn diagnose(
    vision: &dyn ImageClassifier,
    text: &dyn TextClassifier,
    sample_id: &str,
    image: &DynamicImage,
    narrative: &str,
    options: &DiagnoseOptions,
) -> Result<DiagnosisResult> {
    check_models(vision, text)?;
    let start = Instant::now();
    let scores = vision.image_scores(image)?;
    let vision_ms = start.elapsed().as_secs_f64() * 1000.0;
    let mut result = diagnose_from_scores(text, sample_id, scores, narrative, options)?;
    let total_ms = start.elapsed().as_secs_f64() * 1000.0;
    result.timings = Some(StageTimings {
        vision_ms,
        text_ms: total_ms - vision_ms,
        total_ms,
    });
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionPair {
    pub trial: usize,
    pub image_id: String,
    pub narrative_id: String,
    pub gold: ClassCode,
    pub predicted: ClassCode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub options: DiagnoseOptions,
    pub trials: usize,
    pub pairing_seed: u64,
    /// Count confusion and top-1 of the fused decisions.
    pub report: EvaluationReport,
    /// Row-normalized confusion.
    pub accuracy_confusion: Vec<Vec<f64>>,
    /// Top-k of the image model alone on the same images.
    pub vision_only: EvaluationReport,
    pub pairs: Vec<FusionPair>,
}

/// Pairs every val image with a seeded, uniformly drawn val narrative of the
/// same class, once per trial.
pub fn evaluate_fusion(
    vision: &dyn ImageClassifier,
    text: &dyn TextClassifier,
    manifest: &DatasetManifest,
    corpus: &NarrativeCorpus,
    options: &DiagnoseOptions,
    trials: usize,
    pairing_seed: u64,
) -> Result<FusionReport> {
    check_models(vision, text)?;
    vision.registry().ensure_matches(manifest.registry())?;
    vision.registry().ensure_matches(&corpus.registry)?;
    options.validate(vision.registry())?;
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be positive".into()));
    }
    let images = load_split(manifest, Split::Val)?;
    if images.is_empty() {
        return Err(Error::InvalidManifest("val split is empty".into()));
    }
    let stories = corpus.by_class(Some(Split::Val));
    let missing: BTreeSet<ClassCode> = images
        .iter()
        .map(|i| i.class_code)
        .filter(|c| stories.get(c).is_none_or(|v| v.is_empty()))
        .collect();
    if !missing.is_empty() {
        let names = missing
            .iter()
            .map(|&c| vision.registry().name(c).map(str::to_string))
            .collect::<Result<_>>()?;
        return Err(Error::EmptyClasses(names));
    }

    let decoded: Vec<DynamicImage> = images.iter().map(|i| i.image.clone()).collect();
    let scores = vision.batch_scores(&decoded)?;
    let vision_only = crate::metrics::evaluate_scores(
        vision.registry().len(),
        &crate::vision::DEFAULT_KS,
        images.iter().zip(&scores).map(|(i, s)| (i.class_code, s.as_slice())),
    )?;

    let mut jobs = Vec::new();
    for trial in 0..trials {
        let mut rng = stream_rng(pairing_seed, trial as u64);
        for (idx, img) in images.iter().enumerate() {
            let pool = &stories[&img.class_code];
            let story = *pool.choose(&mut rng).expect("nonempty pool");
            jobs.push((trial, idx, story));
        }
    }
    let pairs: Vec<FusionPair> = jobs
        .par_iter()
        .map(|&(trial, idx, story)| {
            let img = &images[idx];
            let r = diagnose_from_scores(text, &img.id, scores[idx].clone(), &story.story, options)?;
            Ok(FusionPair {
                trial,
                image_id: img.id.clone(),
                narrative_id: story.id.clone(),
                gold: img.class_code,
                predicted: r.final_class,
            })
        })
        .collect::<Result<_>>()?;
    let report = evaluate_decisions(vision.registry().len(), pairs.iter().map(|p| (p.gold, p.predicted)))?;
    Ok(FusionReport {
        options: *options,
        trials,
        pairing_seed,
        accuracy_confusion: report.accuracy_confusion(),
        report,
        vision_only,
        pairs,
    })
}
