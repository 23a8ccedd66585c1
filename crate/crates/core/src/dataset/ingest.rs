//! Walks one source dataset laid out as `<root>/<class directory>/**/<image>`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::dedup::difference_hash;
use super::sample::{ContentHash, ImageSample};
use crate::error::{Error, Result};
use crate::registry::{ClassCode, ClassRegistry};

/// Maps top-level directory names of a source onto registry codes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    pub labels: BTreeMap<String, ClassCode>,
    /// Directories that are deliberately skipped.
    #[serde(default)]
    pub ignore: BTreeSet<String>,
}

impl LabelMap {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self, registry: &ClassRegistry) -> Result<()> {
        for code in self.labels.values() {
            registry.check(*code)?;
        }
        Ok(())
    }
}

/// Relative paths removed by manual relevance review, one per line.
#[derive(Clone, Debug, Default)]
pub struct ExclusionList(BTreeSet<String>);

impl ExclusionList {
    pub fn parse(text: &str) -> Self {
        ExclusionList(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, relative_path: &str) -> bool {
        self.0.contains(relative_path)
    }
}

#[derive(Clone, Debug, Default)]
pub struct IngestOptions {
    pub exclusions: ExclusionList,
    /// Also compute a perceptual hash for the optional near-duplicate pass.
    pub perceptual: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub relative_path: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct IngestReport {
    pub samples: Vec<ImageSample>,
    pub rejected: Vec<Rejection>,
    pub excluded: Vec<String>,
}

fn relative_string(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Reads every file under the mapped class directories of `source_root`.
///
/// Files that cannot be decoded as images are reported in
/// [`IngestReport::rejected`]. A top-level directory that is neither mapped
/// nor ignored is a hard error, as is a source that yields no images.
pub fn ingest_source(
    source_root: &Path,
    source_id: &str,
    label_map: &LabelMap,
    options: &IngestOptions,
) -> Result<IngestReport> {
    if source_id.is_empty() || source_id.contains('/') {
        return Err(Error::InvalidInput(format!(
            "source id {source_id:?} must be nonempty and contain no '/'"
        )));
    }
    let entries = fs::read_dir(source_root).map_err(|e| Error::io(source_root, e))?;
    let mut report = IngestReport::default();
    let mut class_dirs: Vec<(PathBuf, ClassCode)> = Vec::new();
    let mut top: Vec<_> = entries
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(source_root, e))?;
    top.sort_by_key(|e| e.file_name());
    for entry in top {
        let name = entry.file_name().to_string_lossy().into_owned();
        let path = entry.path();
        if path.is_dir() {
            if let Some(code) = label_map.labels.get(&name) {
                class_dirs.push((path, *code));
            } else if !label_map.ignore.contains(&name) {
                return Err(Error::UnmappedDirectory {
                    source_id: source_id.to_string(),
                    directory: name,
                });
            }
        } else {
            report.rejected.push(Rejection {
                relative_path: name,
                reason: "file outside any class directory".into(),
            });
        }
    }

    let mut files: Vec<(PathBuf, String, ClassCode)> = Vec::new();
    for (dir, code) in &class_dirs {
        for entry in WalkDir::new(dir).sort_by_file_name() {
            let entry = entry.map_err(|e| {
                let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| dir.clone());
                Error::io(path, e.into())
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = relative_string(source_root, entry.path());
            if options.exclusions.contains(&rel) {
                report.excluded.push(rel);
                continue;
            }
            files.push((entry.into_path(), rel, *code));
        }
    }

    let results: Vec<std::result::Result<ImageSample, Rejection>> = files
        .par_iter()
        .map(|(path, rel, code)| read_sample(path, rel, *code, source_id, options.perceptual))
        .collect();
    for r in results {
        match r {
            Ok(sample) => report.samples.push(sample),
            Err(rejection) => report.rejected.push(rejection),
        }
    }
    if report.samples.is_empty() {
        return Err(Error::NoImages(source_root.to_path_buf()));
    }
    Ok(report)
}

fn read_sample(
    path: &Path,
    rel: &str,
    class_code: ClassCode,
    source_id: &str,
    perceptual: bool,
) -> std::result::Result<ImageSample, Rejection> {
    let reject = |reason: String| Rejection {
        relative_path: rel.to_string(),
        reason,
    };
    let bytes = fs::read(path).map_err(|e| reject(format!("unreadable: {e}")))?;
    let image = image::load_from_memory(&bytes).map_err(|e| reject(format!("not a decodable image: {e}")))?;
    Ok(ImageSample {
        id: ImageSample::make_id(source_id, rel),
        source_id: source_id.to_string(),
        relative_path: rel.to_string(),
        class_code,
        content_hash: ContentHash::of_bytes(&bytes),
        width: image.width(),
        height: image.height(),
        perceptual_hash: perceptual.then(|| difference_hash(&image)),
        split: None,
    })
}
