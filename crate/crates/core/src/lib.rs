//! Food-image dataset curation and supervised-contrastive learning.

pub mod checkpoint;
pub mod dedup;
pub mod diversity;
pub mod error;
pub mod foodness;
pub mod fsutil;
pub mod imaging;
pub mod manifest;
pub mod pipeline;
pub mod scl;
pub mod synth;

pub use error::{Error, Result};
