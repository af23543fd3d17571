//! Distribution edited models: extract per-dataset distribution vectors from
//! fine-tuned checkpoints, compose them onto a base with chosen weights,
//! search those weights against an external evaluator, and analyze the
//! resulting weight-space geometry and training cost.
//!
//! Checkpoints live in the DEMCKPT container ([`format`]). All merge and
//! analytics operations stream tensor by tensor over [`TensorSource`]s, so
//! peak memory tracks the largest tensor rather than the whole model.

pub mod analytics;
pub mod checkpoint;
pub mod cli;
pub mod cost;
pub mod error;
pub mod format;
mod fsutil;
pub mod merge;
pub mod search;
pub mod weights;

pub use checkpoint::{check_compatibility, Checkpoint, CheckpointBuilder, Tensor, TensorSink, TensorSource};
pub use demerge_core::{CheckpointKind, DType, MergeMode, TensorMeta, TensorSpec, WeightConfig};
pub use error::{Error, Result};
pub use format::{open, read_checkpoint, write_checkpoint, CheckpointReader, CheckpointWriter};
pub use fsutil::write_atomic;
