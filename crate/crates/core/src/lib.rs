//! One-class anomaly detection for two-person 3D skeleton motion.
//!
//! The crate trains an interaction encoder (two parameter-shared temporal
//! attention streams coupled by cross-attention and by inter-person distance
//! maps) together with a normalizing-flow likelihood head on a single
//! "normal" interaction category, then scores unseen clips by negative
//! log-likelihood and evaluates with AUROC.
//!
//! Module map:
//! - [`data`] — dataset types, JSONL I/O, normalization, resampling,
//!   synthetic scenario generation
//! - [`distmap`] — inter-person distance maps and the displacement statistic
//! - [`numeric`] — matrix autodiff tape, QR, attention primitive, gradient
//!   checking
//! - [`encoder`] — the two-stream attention encoder producing fused features
//! - [`flow`] — invertible flow with exact log-determinant and NLL scoring
//! - [`train`] — one-class training loop and per-sample scoring
//! - [`eval`] — AUROC and the per-category benchmark protocol
//! - [`checkpoint`] — manifest + raw-payload model serialization

pub mod checkpoint;
pub mod data;
pub mod distmap;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod flow;
pub mod numeric;
pub mod train;

pub use checkpoint::{load as load_checkpoint, save as save_checkpoint};
pub use data::{
    load_dataset, normalize_pair, resample_pair, resample_to_length, synth_generate,
    write_dataset, InteractionDataset, InteractionPair, PoseSequence, Scenario, Split,
};
pub use distmap::{displacement_statistic, distance_maps, DistanceMapSequence};
pub use encoder::{prepare, EncoderConfig, EncoderParams, PeMode, PreparedSample};
pub use error::{Error, ErrorKind, Result};
pub use eval::{auroc, roc_points, run_benchmark, BenchmarkReport, CategoryResult, ScoredSample};
pub use flow::{FlowModel, FlowTransform};
pub use train::{init_model, lr_at, train_one_class, TrainConfig, TrainedModel};
