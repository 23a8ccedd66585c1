//! The ordered class set shared by every other module.
//!
//! Codes are contiguous `0..n`. Names are unique after whitespace and case
//! normalization, so lookups by name are forgiving about formatting.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer code of a class inside a [`ClassRegistry`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassCode(pub u32);

impl ClassCode {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn from_index(index: usize) -> Self {
        ClassCode(index as u32)
    }
}

impl fmt::Display for ClassCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub code: ClassCode,
    pub name: String,
}

#[derive(Serialize, Deserialize)]
struct RawRegistry {
    version: String,
    classes: Vec<ClassEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRegistry", into = "RawRegistry")]
pub struct ClassRegistry {
    version: String,
    classes: Vec<ClassEntry>,
    #[serde(skip)]
    by_name: HashMap<String, ClassCode>,
}

impl From<ClassRegistry> for RawRegistry {
    fn from(r: ClassRegistry) -> Self {
        RawRegistry {
            version: r.version,
            classes: r.classes,
        }
    }
}

impl TryFrom<RawRegistry> for ClassRegistry {
    type Error = Error;

    fn try_from(raw: RawRegistry) -> Result<Self> {
        for (i, entry) in raw.classes.iter().enumerate() {
            if entry.code.index() != i {
                return Err(Error::InvalidRegistry(format!(
                    "class {:?} has code {} but position {i}; codes must be contiguous from 0",
                    entry.name, entry.code
                )));
            }
        }
        Self::new(raw.version, raw.classes.into_iter().map(|c| c.name))
    }
}

/// Lowercases and collapses runs of whitespace.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// The 26 disease classes of the aggregated image dataset, in code order.
///
/// Dermatofibroma is code 1 and the psoriasis / lichen planus group is code 7;
/// the remaining classes follow the order of the dataset statistics table.
pub const SKIN26_CLASSES: [&str; 26] = [
    "Acne and Rosacea",
    "Dermatofibroma",
    "Atopic Dermatitis",
    "Basal Cell Carcinoma (BCC)",
    "Benign Keratosis-like Lesions (BKL)",
    "Bullous Disease",
    "Cellulitis Impetigo and other Bacterial Infections",
    "Psoriasis pictures Lichen Planus and related diseases",
    "Eczema",
    "Exanthems and Drug Eruptions",
    "Hair Loss Alopecia and other Hair Diseases",
    "Light Diseases and Disorders of Pigmentation",
    "Lupus and other Connective Tissue diseases",
    "Melanocytic Nevi (NV)",
    "Melanoma Skin Cancer Nevi and Moles",
    "Nail Fungus and other Nail Disease",
    "Poison Ivy and other Contact Dermatitis",
    "Scabies Lyme Disease and other Infestations and Bites",
    "Seborrheic Keratoses and other Benign Tumors",
    "Systemic Disease",
    "Tinea Ringworm Candidiasis and other Fungal Infections",
    "Urticaria Hives",
    "Vascular Tumors",
    "Vasculitis",
    "Warts Molluscum and other Viral Infections",
    "Squamous cell carcinoma",
];

pub const SKIN26_VERSION: &str = "skin26-v1";

impl ClassRegistry {
    pub fn new<I, S>(version: impl Into<String>, names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let version = version.into();
        if version.trim().is_empty() {
            return Err(Error::InvalidRegistry("empty version".into()));
        }
        let mut classes = Vec::new();
        let mut by_name = HashMap::new();
        for (i, name) in names.into_iter().enumerate() {
            let name: String = name.into();
            let key = normalize_name(&name);
            if key.is_empty() {
                return Err(Error::InvalidRegistry(format!("class {i} has an empty name")));
            }
            let code = ClassCode::from_index(i);
            if by_name.insert(key, code).is_some() {
                return Err(Error::InvalidRegistry(format!("duplicate class name {name:?}")));
            }
            classes.push(ClassEntry { code, name });
        }
        if classes.is_empty() {
            return Err(Error::InvalidRegistry("no classes".into()));
        }
        Ok(ClassRegistry {
            version,
            classes,
            by_name,
        })
    }

    /// The 26-class skin disease registry.
    pub fn skin26() -> Self {
        Self::new(SKIN26_VERSION, SKIN26_CLASSES).expect("built-in registry is valid")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn codes(&self) -> impl ExactSizeIterator<Item = ClassCode> + '_ {
        self.classes.iter().map(|c| c.code)
    }

    pub fn contains(&self, code: ClassCode) -> bool {
        code.index() < self.classes.len()
    }

    pub fn check(&self, code: ClassCode) -> Result<ClassCode> {
        if self.contains(code) {
            Ok(code)
        } else {
            Err(Error::UnknownCode(code))
        }
    }

    pub fn name(&self, code: ClassCode) -> Result<&str> {
        self.classes
            .get(code.index())
            .map(|c| c.name.as_str())
            .ok_or(Error::UnknownCode(code))
    }

    pub fn code_of(&self, name: &str) -> Result<ClassCode> {
        self.by_name
            .get(&normalize_name(name))
            .copied()
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    /// Fails unless `other` has the same version and class list.
    pub fn ensure_matches(&self, other: &ClassRegistry) -> Result<()> {
        if self.version != other.version || self.classes != other.classes {
            return Err(Error::RegistryMismatch {
                expected: self.version.clone(),
                found: other.version.clone(),
            });
        }
        Ok(())
    }
}
