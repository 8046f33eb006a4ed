//! Cross-modal transferable adversarial attacks on no-reference video
//! quality metrics, driven through white-box image quality metrics and an
//! image embedder, plus the correlation-based evaluation harness.

pub mod adapters;
pub mod attack;
pub mod error;
pub mod eval;
pub mod graph;
pub mod losses;
pub mod media;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
