//! Metrics, synthetic datasets and the evaluation harness.

pub mod dataset;
pub mod eval;
pub mod metrics;
pub mod scenes;

pub use dataset::{gen_dataset, DatasetConfig, DatasetManifest, ManifestEntry};
pub use eval::{run_eval, EvalConfig, EvalReport};
pub use metrics::{psnr, ssim, Psnr};
pub use scenes::{scene_suite, synthetic_scene};
