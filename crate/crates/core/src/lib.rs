//! Multi-task text classification with a hard-shared transformer encoder.
//!
//! The crate is organized as a vertical stack:
//!
//! - [`tensor`]: dense float tensors with reverse-mode automatic
//!   differentiation and an Adam optimizer. Generic over the scalar type;
//!   all production models run in `f32`.
//! - [`text`]: tweet-style text normalization, vocabulary construction,
//!   token encoding, and CSV corpus ingestion with train/validation splits.
//! - [`encoder`]: a compact BERT-style transformer encoder (learned token and
//!   position embeddings, multi-head self-attention, GELU feed-forward
//!   blocks, post-norm residuals, CLS pooling).
//! - [`multitask`]: the task registry, per-task classification heads over the
//!   shared encoder, the proportional multi-task batch scheduler, the joint
//!   training loop, and binary checkpointing.
//! - [`metrics`]: confusion matrices and the imbalance-aware score suite
//!   (per-class precision/recall/F1, macro and support-weighted averages).
//! - [`config`] and [`runner`]: the TOML run configuration and the
//!   train/eval/compare entry points behind the `textmtl` binary.

pub mod config;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod multitask;
pub mod runner;
pub mod tensor;
pub mod text;

pub use error::{Error, Result};
