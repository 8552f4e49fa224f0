//! Packaging pairs on disk: formats, metrics, export, validation, statistics.

pub mod export;
pub mod formats;
pub mod metrics;
pub mod stats;
pub mod validate;

pub use export::{export_pair, forge_scene, generate, ForgeConfig, ForgeError, ManifestRecord, ScenePackage};
pub use metrics::{mask_iou, psnr, psnr_u8};
pub use stats::{dataset_stats, DatasetStats};
pub use validate::{validate_dataset, CheckKind, DatasetReport};
