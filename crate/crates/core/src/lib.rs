//! Cross-domain knowledge extraction and plugging for CTR models.
//!
//! A multi-task extractor is pre-trained on a large, dense behavior log; its
//! user, item and user-item interaction representations are then added into
//! an intermediate layer of a downstream CTR model trained on a sparse log.
//! Decomposed and degenerated extractors make the knowledge cacheable, and
//! the harness runs day-partitioned online-learning experiments scored with
//! impression-weighted per-user AUC.

pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod extractor;
pub mod harness;
pub mod nncore;
pub mod plugnet;
pub mod servingkit;

pub use error::{KeepError, Result};
