//! Symptom profiles and patient narratives.
//!
//! Corpus files are JSON documents of the form
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "registry": { ... },
//!   "split_seed": 7,
//!   "narratives": [
//!     { "id": "eczema-01", "class": "Eczema", "keywords": ["..."],
//!       "prompt": "...", "story": "...", "split": "train" }
//!   ]
//! }
//! ```
//!
//! Records refer to classes by name. Imported prompts are kept verbatim even
//! when they use a different phrasing than [`build_generation_prompt`].

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{rounded_share, stream_rng, Split};
use crate::error::{Error, Result};
use crate::registry::{ClassCode, ClassRegistry};

pub const CORPUS_SCHEMA_VERSION: u32 = 1;
pub const STORIES_PER_CLASS: usize = 10;
pub const TEXT_TRAIN_FRACTION: f64 = 0.7;

const GENERATION_PREFIX: &str =
    "Pretending you are a patient, please construct a one paragraph patient narrative using these symptoms: ";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiseaseProfile {
    pub class_code: ClassCode,
    pub symptoms: Vec<String>,
    pub source_summary: String,
}

impl DiseaseProfile {
    pub fn validate(&self, registry: &ClassRegistry) -> Result<()> {
        registry.check(self.class_code)?;
        if self.symptoms.is_empty() {
            return Err(Error::InvalidInput(format!(
                "profile for class {} has no symptoms",
                self.class_code
            )));
        }
        Ok(())
    }
}

/// The canonical narrative-generation prompt for a keyword list.
///
/// Keywords are joined with `", "` and quoted; embedded quotes are kept as-is.
/// Two lists whose joined forms coincide (for example `["a, b"]` and
/// `["a", "b"]`) produce the same prompt.
pub fn build_generation_prompt<S: AsRef<str>>(keywords: &[S]) -> Result<String> {
    if keywords.is_empty() {
        return Err(Error::InvalidInput("at least one keyword is required".into()));
    }
    let joined = keywords
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(", ");
    Ok(format!("{GENERATION_PREFIX}\"{joined}\""))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Narrative {
    pub id: String,
    pub class_code: ClassCode,
    pub keywords: Vec<String>,
    pub generation_prompt: String,
    pub story: String,
    pub split: Option<Split>,
}

#[derive(Serialize, Deserialize)]
struct NarrativeRecord {
    id: String,
    class: String,
    keywords: Vec<String>,
    prompt: String,
    story: String,
    split: Option<Split>,
}

#[derive(Serialize, Deserialize)]
struct CorpusDocument {
    schema_version: u32,
    registry: ClassRegistry,
    split_seed: Option<u64>,
    narratives: Vec<NarrativeRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NarrativeCorpus {
    pub registry: ClassRegistry,
    pub narratives: Vec<Narrative>,
    pub split_seed: Option<u64>,
}

impl NarrativeCorpus {
    pub fn new(registry: ClassRegistry) -> Self {
        NarrativeCorpus {
            registry,
            narratives: Vec::new(),
            split_seed: None,
        }
    }

    /// Adds a narrative after checking its class and story.
    pub fn push(&mut self, narrative: Narrative) -> Result<()> {
        self.registry.check(narrative.class_code)?;
        if narrative.story.trim().is_empty() {
            return Err(Error::InvalidInput(format!("narrative {} has an empty story", narrative.id)));
        }
        self.narratives.push(narrative);
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Narrative> {
        self.narratives.iter().filter(move |n| n.split == Some(split))
    }

    pub fn by_class(&self, split: Option<Split>) -> BTreeMap<ClassCode, Vec<&Narrative>> {
        let mut out: BTreeMap<ClassCode, Vec<&Narrative>> = BTreeMap::new();
        for n in &self.narratives {
            if split.is_none() || n.split == split {
                out.entry(n.class_code).or_default().push(n);
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = CorpusDocument {
            schema_version: CORPUS_SCHEMA_VERSION,
            registry: self.registry.clone(),
            split_seed: self.split_seed,
            narratives: self
                .narratives
                .iter()
                .map(|n| {
                    Ok(NarrativeRecord {
                        id: n.id.clone(),
                        class: self.registry.name(n.class_code)?.to_string(),
                        keywords: n.keywords.clone(),
                        prompt: n.generation_prompt.clone(),
                        story: n.story.clone(),
                        split: n.split,
                    })
                })
                .collect::<Result<_>>()?,
        };
        crate::io::to_pretty_json(&doc)
    }

    /// Parses a corpus document. Empty stories are kept so that
    /// [`validate_corpus`] can report them.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CorpusDocument = serde_json::from_str(text)?;
        if doc.schema_version != CORPUS_SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported corpus schema version {}",
                doc.schema_version
            )));
        }
        let narratives = doc
            .narratives
            .into_iter()
            .map(|r| {
                Ok(Narrative {
                    class_code: doc.registry.code_of(&r.class)?,
                    id: r.id,
                    keywords: r.keywords,
                    generation_prompt: r.prompt,
                    story: r.story,
                    split: r.split,
                })
            })
            .collect::<Result<_>>()?;
        Ok(NarrativeCorpus {
            registry: doc.registry,
            narratives,
            split_seed: doc.split_seed,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCountIssue {
    pub class_code: ClassCode,
    pub name: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub expected_per_class: usize,
    pub per_class: BTreeMap<ClassCode, usize>,
    pub total: usize,
    pub under_count: Vec<ClassCountIssue>,
    pub over_count: Vec<ClassCountIssue>,
    /// Groups of narrative ids with byte-identical stories.
    pub duplicate_stories: Vec<Vec<String>>,
    pub empty_stories: Vec<String>,
}

impl CorpusReport {
    pub fn is_clean(&self) -> bool {
        self.under_count.is_empty()
            && self.over_count.is_empty()
            && self.duplicate_stories.is_empty()
            && self.empty_stories.is_empty()
    }

    pub fn violation_count(&self) -> usize {
        self.under_count.len()
            + self.over_count.len()
            + self.duplicate_stories.len()
            + self.empty_stories.len()
    }
}

/// Report-only validation against an expected per-class story count.
pub fn validate_corpus(corpus: &NarrativeCorpus, expected_per_class: usize) -> CorpusReport {
    let mut per_class: BTreeMap<ClassCode, usize> = corpus.registry.codes().map(|c| (c, 0)).collect();
    for n in &corpus.narratives {
        *per_class.entry(n.class_code).or_default() += 1;
    }
    let issue = |code: ClassCode, count: usize| ClassCountIssue {
        class_code: code,
        name: corpus.registry.name(code).unwrap_or("<unknown>").to_string(),
        count,
    };
    let under_count = per_class
        .iter()
        .filter(|(_, &n)| n < expected_per_class)
        .map(|(c, &n)| issue(*c, n))
        .collect();
    let over_count = per_class
        .iter()
        .filter(|(_, &n)| n > expected_per_class)
        .map(|(c, &n)| issue(*c, n))
        .collect();

    let mut by_story: HashMap<&str, Vec<String>> = HashMap::new();
    let mut empty_stories = Vec::new();
    for n in &corpus.narratives {
        if n.story.trim().is_empty() {
            empty_stories.push(n.id.clone());
        } else {
            by_story.entry(n.story.as_str()).or_default().push(n.id.clone());
        }
    }
    let mut duplicate_stories: Vec<Vec<String>> =
        by_story.into_values().filter(|ids| ids.len() > 1).collect();
    duplicate_stories.sort();

    CorpusReport {
        expected_per_class,
        total: corpus.narratives.len(),
        per_class,
        under_count,
        over_count,
        duplicate_stories,
        empty_stories,
    }
}

/// Per-class seeded train/val split with `round(train_fraction * n)` in train.
pub fn split_corpus(corpus: &NarrativeCorpus, seed: u64, train_fraction: f64) -> Result<NarrativeCorpus> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut groups: BTreeMap<ClassCode, Vec<usize>> =
        corpus.registry.codes().map(|c| (c, Vec::new())).collect();
    for (i, n) in corpus.narratives.iter().enumerate() {
        groups.entry(n.class_code).or_default().push(i);
    }
    let short: Vec<String> = groups
        .iter()
        .filter(|(_, v)| v.len() < 2)
        .map(|(c, v)| format!("{} ({})", corpus.registry.name(*c).unwrap_or("<unknown>"), v.len()))
        .collect();
    if !short.is_empty() {
        return Err(Error::EmptyClasses(short));
    }
    let mut out = corpus.clone();
    for (code, mut idx) in groups {
        idx.sort_by(|&a, &b| corpus.narratives[a].id.cmp(&corpus.narratives[b].id));
        idx.shuffle(&mut stream_rng(seed, u64::from(code.0) + 1));
        let n_train = rounded_share(train_fraction, idx.len());
        for (pos, &i) in idx.iter().enumerate() {
            out.narratives[i].split = Some(if pos < n_train { Split::Train } else { Split::Val });
        }
    }
    out.split_seed = Some(seed);
    Ok(out)
}
