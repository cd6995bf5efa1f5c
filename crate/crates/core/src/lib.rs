//! Contrastive image-text training with context-aware soft targets, on
//! synthetic crop/condition data.
//!
//! Modules follow the data path: [`vocab`] and [`synth`] build concepts,
//! captions and samples; [`encoder`] holds the two towers; [`soft_target`]
//! plans batches and builds target matrices; [`loss`] scores them; [`optim`]
//! and [`train`] run the loop; [`eval`] measures the result; [`pipeline`]
//! ties runs to files on disk.

pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod loss;
pub mod optim;
pub mod pipeline;
pub mod soft_target;
pub mod synth;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
