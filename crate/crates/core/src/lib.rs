//! Interactive adaptive neural machine translation at toy scale.

pub mod bpe;
pub mod decode;
pub mod engine;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod session;
pub mod simulate;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod vocab;

#[cfg(test)]
mod testing;

pub use error::{Error, Result};
pub use tensor::Tensor;
