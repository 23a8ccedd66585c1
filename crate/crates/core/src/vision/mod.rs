//! Image classification: augmentation, partial freezing, training,
//! evaluation and top-N export.

pub mod augment;
pub mod backbone;
mod evaluate;
pub mod freeze;
mod model;
pub mod sweep;
mod train;

pub use augment::{build_augmentation, images_to_tensor, AugmentMode, AugmentationConfig, Augmenter};
pub use backbone::{freeze_parameters, lookup_backbone, BackboneConfig, VisionNet, BACKBONES};
pub use evaluate::{evaluate, DEFAULT_KS};
pub use freeze::{plan_freeze, FreezePlan, GroupInfo, GroupRole};
pub use model::{
    decode_image, load_split, predict_topn, read_image, LoadedImage, VisionCheckpointMeta, VisionModel,
};
pub use sweep::{sweep, AugmentPreset, SweepCell, SweepGrid, SweepResults};
pub use train::{train, EpochRecord, SamplerKind, TrainConfig, TrainOutcome};
