use super::model::{load_split, VisionModel};
use crate::dataset::{DatasetManifest, Split};
use crate::error::Result;
use crate::metrics::{EvaluationReport, ScoreAccumulator};

pub const DEFAULT_KS: [usize; 3] = [1, 3, 5];

/// Top-k report and confusion matrix on the val split.
pub fn evaluate(model: &VisionModel, manifest: &DatasetManifest, ks: &[usize]) -> Result<EvaluationReport> {
    model.registry().ensure_matches(manifest.registry())?;
    let data = load_split(manifest, Split::Val)?;
    let images: Vec<_> = data.iter().map(|d| d.image.clone()).collect();
    let scores = model.predict_scores(&images)?;
    let mut acc = ScoreAccumulator::new(model.registry().len(), ks);
    for (d, s) in data.iter().zip(&scores) {
        acc.add(d.class_code, s)?;
    }
    Ok(acc.finish())
}
