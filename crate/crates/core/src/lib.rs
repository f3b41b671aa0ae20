//! Cross-spectral body recognition at desk scale: a small ViT with side
//! information embeddings, identity + batch-hard triplet losses, a
//! domain-balanced PK sampler, SGD training, and CMC/mAP retrieval evaluation.

pub mod autodiff;
pub mod check;
pub mod data;
pub mod model;
pub mod error;
pub mod eval;
pub mod losses;
pub mod train;

pub use error::{Error, Result};
