//! Dense retrieval with multi-layer document representations: a small
//! transformer encoder, max-sim scoring and losses, an exact multi-vector
//! index, training with hard-negative mining, and retrieval metrics.

pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod model;
pub mod scoring;
pub mod synthetic;
pub mod tokenizer;
pub mod train;

pub use checkpoint::Checkpoint;
pub use error::{MlrError, Result};
pub use model::Model;
