//! Allocation-only kernels behind distribution edited models.
//!
//! Nothing in this crate touches the filesystem or spawns processes; the
//! `demerge` crate drives these kernels over DEMCKPT files. Every reduction
//! here runs in a fixed order so that results are bit-reproducible.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod arith;
pub mod cost;
pub mod dtype;
pub mod error;
pub mod geometry;
pub mod layout;
pub mod search;

pub use arith::{Accumulator, MergeMode, WeightConfig, WeightEntry, WeightWarning};
pub use dtype::DType;
pub use error::{Error, Result};
pub use layout::{check_compatibility, CheckpointKind, FlatView, TensorMeta, TensorSpec};
