//! Service configuration (TOML).
//!
//! ```toml
//! vision_checkpoint = "models/vision"
//! adapter_checkpoint = "models/text"
//! registry_version = "skin26-v1"   # optional check
//! top_n = 5
//! chain = "5"                      # or "direct"
//! record_timings = true
//!
//! [limits]
//! max_upload_bytes = 10485760
//! max_narrative_chars = 5000
//! ```
//!
//! Relative checkpoint paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ChainMode, DiagnoseOptions};
use crate::error::{Error, Result};
use crate::text::TextModel;
use crate::vision::VisionModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceLimits {
    #[serde(default = "default_max_upload")]
    pub max_upload_bytes: usize,
    #[serde(default = "default_max_narrative")]
    pub max_narrative_chars: usize,
}

fn default_max_upload() -> usize {
    10 * 1024 * 1024
}

fn default_max_narrative() -> usize {
    5000
}

impl Default for ServiceLimits {
    fn default() -> Self {
        ServiceLimits {
            max_upload_bytes: default_max_upload(),
            max_narrative_chars: default_max_narrative(),
        }
    }
}

fn default_top_n() -> usize {
    5
}

fn default_chain() -> String {
    "5".into()
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub vision_checkpoint: PathBuf,
    pub adapter_checkpoint: PathBuf,
    #[serde(default)]
    pub registry_version: Option<String>,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default = "default_chain")]
    pub chain: String,
    #[serde(default = "default_true")]
    pub record_timings: bool,
    #[serde(default)]
    pub limits: ServiceLimits,
}

impl ServiceConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ServiceConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("service config: {e}")))?;
        for p in [&mut cfg.vision_checkpoint, &mut cfg.adapter_checkpoint] {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        cfg.chain_mode()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn chain_mode(&self) -> Result<ChainMode> {
        self.chain.parse()
    }

    pub fn default_options(&self) -> Result<DiagnoseOptions> {
        Ok(DiagnoseOptions {
            top_n: self.top_n,
            chain: self.chain_mode()?,
        })
    }
}

/// Loads both checkpoints and checks they agree with each other and the
/// configured registry version.
pub fn load_models(cfg: &ServiceConfig) -> Result<(VisionModel, TextModel)> {
    let vision = VisionModel::load(&cfg.vision_checkpoint)?;
    let text = TextModel::load(&cfg.adapter_checkpoint)?;
    vision.registry().ensure_matches(text.registry())?;
    if let Some(v) = &cfg.registry_version {
        if v != vision.registry().version() {
            return Err(Error::RegistryMismatch {
                expected: v.clone(),
                found: vision.registry().version().to_string(),
            });
        }
    }
    cfg.default_options()?.validate(vision.registry())?;
    Ok((vision, text))
}
