//! SIE-ViT: patch embedding, token assembly, additive side-information
//! embedding, transformer encoder, and feature composition.

pub mod checkpoint;
mod config;
mod forward;
mod params;

pub use config::ModelConfig;
pub use forward::{
    apply_sie, assemble_sequence, compose_feature, encode, forward, forward_batch,
    forward_feature, gem_pool, patchify, unpatchify, BoundParams, GEM_EPS,
};
pub use params::{LayerParams, ModelParams};
