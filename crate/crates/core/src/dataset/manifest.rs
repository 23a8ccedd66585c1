//! The dataset manifest document.
//!
//! A manifest is a single JSON document:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "registry": { "version": "...", "classes": [{ "code": 0, "name": "..." }] },
//!   "sources": [{ "source_id": "...", "root": "..." }],
//!   "split_config": { "train_fraction": 0.8, "seed": 0, "stratified": true },
//!   "samples": [ ImageSample, ... ],
//!   "duplicates": [ { "sample": ImageSample, "kept_id": "..." } ],
//!   "stats": { "rows": [...], "total": 0 }
//! }
//! ```
//!
//! Samples never share a content hash: new samples are deduplicated against
//! the manifest as they are added. `stats` is recomputed on write and checked
//! against a recount on read.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dedup::{dedup, DedupOutcome, Duplicate};
use super::ingest::Rejection;
use super::sample::{ImageSample, Split};
use super::split::{assign_splits, SplitConfig};
use super::stats::{compute_stats, ClassStats};
use crate::error::{Error, Result};
use crate::registry::ClassRegistry;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub source_id: String,
    pub root: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<Rejection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    schema_version: u32,
    registry: ClassRegistry,
    sources: Vec<SourceRecord>,
    split_config: Option<SplitConfig>,
    samples: Vec<ImageSample>,
    #[serde(default)]
    duplicates: Vec<Duplicate>,
    stats: ClassStats,
}

impl DatasetManifest {
    pub fn new(registry: ClassRegistry) -> Self {
        let stats = compute_stats(&registry, &[]);
        DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            registry,
            sources: Vec::new(),
            split_config: None,
            samples: Vec::new(),
            duplicates: Vec::new(),
            stats,
        }
    }

    pub fn registry(&self) -> &ClassRegistry {
        &self.registry
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn sources(&self) -> &[SourceRecord] {
        &self.sources
    }

    pub fn duplicates(&self) -> &[Duplicate] {
        &self.duplicates
    }

    pub fn split_config(&self) -> Option<&SplitConfig> {
        self.split_config.as_ref()
    }

    pub fn stats(&self) -> &ClassStats {
        &self.stats
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageSample> {
        self.samples.iter().filter(move |s| s.split == Some(split))
    }

    pub fn source_root(&self, source_id: &str) -> Option<&Path> {
        self.sources
            .iter()
            .find(|s| s.source_id == source_id)
            .map(|s| Path::new(&s.root))
    }

    pub fn image_path(&self, sample: &ImageSample) -> Result<PathBuf> {
        let root = self.source_root(&sample.source_id).ok_or_else(|| {
            Error::InvalidManifest(format!("sample {} has unknown source", sample.id))
        })?;
        Ok(root.join(&sample.relative_path))
    }

    /// Adds a freshly ingested source. New samples that duplicate existing
    /// content are moved to the duplicate log; any split assignment is cleared.
    pub fn add_source(
        &mut self,
        source_id: &str,
        root: &Path,
        samples: Vec<ImageSample>,
        rejected: Vec<Rejection>,
    ) -> Result<DedupOutcome> {
        if self.sources.iter().any(|s| s.source_id == source_id) {
            return Err(Error::InvalidInput(format!("source {source_id:?} already ingested")));
        }
        for s in &samples {
            self.registry.check(s.class_code)?;
            if s.source_id != source_id {
                return Err(Error::InvalidInput(format!(
                    "sample {} does not belong to source {source_id}",
                    s.id
                )));
            }
        }
        self.sources.push(SourceRecord {
            source_id: source_id.to_string(),
            root: root.to_string_lossy().into_owned(),
            rejected,
        });
        let before: HashSet<String> = self.samples.iter().map(|s| s.id.clone()).collect();
        let mut all = std::mem::take(&mut self.samples);
        all.extend(samples);
        let outcome = dedup(all);
        self.samples = outcome.kept.clone();
        let mut newly_removed = Vec::new();
        for d in &outcome.removed {
            if before.contains(&d.sample.id) {
                return Err(Error::InvalidManifest(format!(
                    "previously kept sample {} became a duplicate",
                    d.sample.id
                )));
            }
            newly_removed.push(d.clone());
        }
        self.duplicates.extend(newly_removed);
        self.clear_splits();
        self.refresh_stats();
        Ok(outcome)
    }

    /// Replaces the sample list with `kept` and logs `removed`.
    pub fn apply_dedup(&mut self, outcome: DedupOutcome) {
        self.samples = outcome.kept;
        self.duplicates.extend(outcome.removed);
        self.refresh_stats();
    }

    pub fn apply_split(&mut self, config: &SplitConfig) -> Result<Vec<String>> {
        let outcome = assign_splits(std::mem::take(&mut self.samples), config)?;
        self.samples = outcome.samples;
        self.split_config = Some(config.clone());
        self.refresh_stats();
        Ok(outcome.warnings)
    }

    fn clear_splits(&mut self) {
        for s in &mut self.samples {
            s.split = None;
        }
        self.split_config = None;
    }

    fn refresh_stats(&mut self) {
        self.samples.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        self.stats = compute_stats(&self.registry, &self.samples);
    }

    /// Builds a manifest from in-memory samples, e.g. for tests and fixtures.
    pub fn from_parts(
        registry: ClassRegistry,
        sources: Vec<SourceRecord>,
        samples: Vec<ImageSample>,
        split_config: Option<SplitConfig>,
    ) -> Result<Self> {
        let mut m = DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            stats: ClassStats::default(),
            registry,
            sources,
            split_config,
            samples,
            duplicates: Vec::new(),
        };
        m.refresh_stats();
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::InvalidManifest(format!(
                "unsupported schema version {}",
                self.schema_version
            )));
        }
        let mut ids = HashSet::new();
        let mut hashes = HashSet::new();
        for s in &self.samples {
            self.registry.check(s.class_code)?;
            if !ids.insert(&s.id) {
                return Err(Error::InvalidManifest(format!("duplicate sample id {}", s.id)));
            }
            if !hashes.insert(s.content_hash) {
                return Err(Error::InvalidManifest(format!(
                    "content hash {} appears more than once",
                    s.content_hash
                )));
            }
            if self.source_root(&s.source_id).is_none() {
                return Err(Error::InvalidManifest(format!("sample {} has unknown source", s.id)));
            }
        }
        let recount = compute_stats(&self.registry, &self.samples);
        if recount != self.stats {
            return Err(Error::InvalidManifest(
                "stored stats do not match a recount of the samples".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }
}
