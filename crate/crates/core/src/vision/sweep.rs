//! Experiment grids over backbone, augmentation, freeze fraction and
//! resolution.
//!
//! Results are written after every cell. Rerunning with the same results
//! file skips cells that already succeeded.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use super::augment::AugmentationConfig;
use super::backbone::BackboneConfig;
use super::evaluate::{evaluate, DEFAULT_KS};
use super::train::{train, TrainConfig};
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::io::{read_json, to_pretty_json, write_atomic};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentPreset {
    None,
    Standard,
    CropRotate,
}

impl AugmentPreset {
    pub fn config(self, resolution: u32) -> AugmentationConfig {
        match self {
            AugmentPreset::None => AugmentationConfig::none(resolution),
            AugmentPreset::Standard => AugmentationConfig::standard(resolution),
            AugmentPreset::CropRotate => AugmentationConfig::crop_rotate(resolution),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub backbone: String,
    #[serde(default)]
    pub pretrained: bool,
    pub augmentation: AugmentPreset,
    pub freeze_fraction: f64,
    pub resolution: u32,
}

impl SweepCell {
    /// Stable identifier derived from the cell and the shared train config.
    pub fn id(&self, train: &TrainConfig) -> Result<String> {
        let canonical = serde_json::to_string(&(self, train))?;
        Ok(hex::encode(&Sha256::digest(canonical.as_bytes())[..6]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub train: TrainConfig,
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    /// Cartesian product in backbone, augmentation, freeze, resolution order.
    pub fn product(
        train: TrainConfig,
        backbones: &[&str],
        augmentations: &[AugmentPreset],
        freeze_fractions: &[f64],
        resolutions: &[u32],
    ) -> Self {
        let mut cells = Vec::new();
        for b in backbones {
            for &a in augmentations {
                for &f in freeze_fractions {
                    for &r in resolutions {
                        cells.push(SweepCell {
                            backbone: b.to_string(),
                            pretrained: false,
                            augmentation: a,
                            freeze_fraction: f,
                            resolution: r,
                        });
                    }
                }
            }
        }
        SweepGrid { train, cells }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellOutcome {
    Ok {
        /// One-based epoch of the kept weights.
        epochs_to_convergence: usize,
        epochs_run: usize,
        top1: f64,
        top3: f64,
        top5: f64,
        runtime_ms: u64,
    },
    Failed {
        error: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell_id: String,
    pub cell: SweepCell,
    pub outcome: CellOutcome,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResults {
    pub rows: Vec<SweepRow>,
}

impl SweepResults {
    pub fn load_or_default(path: &Path) -> Result<Self> {
        if path.exists() {
            read_json(path)
        } else {
            Ok(SweepResults::default())
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, to_pretty_json(self)?.as_bytes())
    }

    fn completed(&self, id: &str) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.cell_id == id && matches!(r.outcome, CellOutcome::Ok { .. }))
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:<16} {:<11} {:>6} {:>5} {:>7} {:>7} {:>7} {:>7} {:>9}",
            "cell", "backbone", "augment", "freeze", "res", "epochs", "top1%", "top3%", "top5%", "time(s)"
        );
        for r in &self.rows {
            let c = &r.cell;
            let backbone = if c.pretrained {
                format!("{} (pt)", c.backbone)
            } else {
                c.backbone.clone()
            };
            let aug = serde_json::to_value(c.augmentation)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            let _ = write!(
                s,
                "{:<12} {:<16} {:<11} {:>6.2} {:>5} ",
                r.cell_id, backbone, aug, c.freeze_fraction, c.resolution
            );
            let _ = match &r.outcome {
                CellOutcome::Ok {
                    epochs_to_convergence,
                    top1,
                    top3,
                    top5,
                    runtime_ms,
                    ..
                } => writeln!(
                    s,
                    "{:>7} {:>7.1} {:>7.1} {:>7.1} {:>9.1}",
                    epochs_to_convergence,
                    top1 * 100.0,
                    top3 * 100.0,
                    top5 * 100.0,
                    *runtime_ms as f64 / 1000.0
                ),
                CellOutcome::Failed { error } => writeln!(s, "FAILED: {error}"),
            };
        }
        s
    }
}

fn run_cell(manifest: &DatasetManifest, cell: &SweepCell, train_cfg: &TrainConfig) -> Result<CellOutcome> {
    let backbone = BackboneConfig {
        architecture: cell.backbone.clone(),
        pretrained: cell.pretrained,
        freeze_fraction: cell.freeze_fraction,
        num_classes: manifest.registry().len(),
    };
    let aug = cell.augmentation.config(cell.resolution);
    let start = Instant::now();
    let outcome = train(manifest, &backbone, &aug, train_cfg)?;
    let report = evaluate(&outcome.model, manifest, &DEFAULT_KS)?;
    let acc = |k| report.top_k_accuracy.get(&k).copied().unwrap_or(0.0);
    Ok(CellOutcome::Ok {
        epochs_to_convergence: outcome.best_epoch.map_or(0, |e| e + 1),
        epochs_run: outcome.history.len(),
        top1: acc(1),
        top3: acc(3),
        top5: acc(5),
        runtime_ms: start.elapsed().as_millis() as u64,
    })
}

/// Runs every cell not already completed in `results_path`.
pub fn sweep(manifest: &DatasetManifest, grid: &SweepGrid, results_path: &Path) -> Result<SweepResults> {
    if grid.cells.is_empty() {
        return Err(Error::InvalidConfig("sweep grid has no cells".into()));
    }
    let previous = SweepResults::load_or_default(results_path)?;
    let mut results = SweepResults::default();
    for cell in &grid.cells {
        let id = cell.id(&grid.train)?;
        if let Some(done) = previous.completed(&id) {
            info!(cell = %id, "already completed, skipping");
            results.rows.push(done.clone());
            continue;
        }
        let outcome = run_cell(manifest, cell, &grid.train).unwrap_or_else(|e| {
            warn!(cell = %id, error = %e, "cell failed");
            CellOutcome::Failed { error: e.to_string() }
        });
        results.rows.push(SweepRow {
            cell_id: id,
            cell: cell.clone(),
            outcome,
        });
        results.save(results_path)?;
    }
    results.save(results_path)?;
    Ok(results)
}
