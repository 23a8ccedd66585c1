//! Multimodal skin-disease classification toolkit.
//!
//! * [`dataset`] aggregates image sources into a deduplicated, split manifest.
//! * [`corpus`] holds patient narratives and their train/val split.
//! * [`vision`] trains and evaluates partial-freeze image classifiers.
//! * [`text`] builds prompts, fine-tunes low-rank adapters and runs
//!   option-elimination inference.
//! * [`fusion`] chains both models into a diagnosis service.

pub mod corpus;
pub mod dataset;
pub mod fusion;
mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod registry;
pub mod synthetic;
pub mod text;
pub mod vision;

pub use error::{Error, Result};
pub use registry::{ClassCode, ClassRegistry};
