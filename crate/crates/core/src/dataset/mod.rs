//! Aggregation of image sources into one deduplicated, split dataset.

mod dedup;
mod ingest;
mod manifest;
pub mod reference;
mod sample;
mod split;
mod stats;
mod weights;

pub use dedup::{dedup, dedup_perceptual, difference_hash, DedupOutcome, Duplicate};
pub use ingest::{ingest_source, ExclusionList, IngestOptions, IngestReport, LabelMap, Rejection};
pub use manifest::{DatasetManifest, SourceRecord, MANIFEST_SCHEMA_VERSION};
pub use sample::{ContentHash, ImageSample, Split};
pub use split::{assign_splits, rounded_share, SplitConfig, SplitOutcome};
pub use stats::{compute_stats, ClassCount, ClassStats};
pub use weights::{sampling_weights, SamplingWeights, WeightedSampler};

pub(crate) use split::stream_rng;
