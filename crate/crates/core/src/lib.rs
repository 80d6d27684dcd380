//! Text-to-compressed-image GANs: a JPEG-style codec with a partial decoder,
//! a small reverse-mode autodiff core, caption embeddings, the generator and
//! discriminator networks, training, datasets and evaluation metrics.

pub mod cli;
pub mod codec;
pub mod coeffs;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod kv;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
