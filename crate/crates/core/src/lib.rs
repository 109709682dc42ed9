//! Attribute interpolation by weight-space model merging.
//!
//! - [`tensor_store`]: the checkpoint container and its canonical byte form.
//! - [`merge`]: compatibility checks, pairwise interpolation, soups and sweeps.
//! - [`toy`]: a small feed-forward synthesizer with pretrain/fine-tune recipes.
//! - [`eval`]: embedding similarity curves, content error and intensity ranking.
//! - [`config`]: plain-text recipe files.
//! - [`experiment`]: the end-to-end pipeline tying the pieces together.

pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod merge;
pub mod tensor_store;
pub mod toy;

pub use error::{Error, Result};
pub use merge::{
    check_compatibility, merge_pair, merge_soup, sweep, CompatReport, IntTensorPolicy, KeyMismatch,
    MergePolicy, SweepSpec,
};
pub use tensor_store::{parse_checkpoint, write_checkpoint, Checkpoint, DType, Tensor, TensorMeta};
