//! Source desensitization for edge-cloud vision pipelines.
//!
//! The edge perturbs an image so a small Vision Transformer stops attending
//! to (and carrying values from) privacy-sensitive patches, then ships only a
//! noised, quantized CLS embedding to the cloud, which classifies behavior
//! and emits a structured risk report.

pub mod channel;
pub mod cloud;
pub mod error;
pub mod eval;
pub mod losses;
pub mod optimizer;
pub mod psz;
pub mod rng;
pub mod tensor;
pub mod vit;

pub use error::{Error, Result};
pub use tensor::Tensor;
