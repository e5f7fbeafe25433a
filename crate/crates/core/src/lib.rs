//! Channel-adaptive vision transformer.
//!
//! Images with any number of channels (up to a configured maximum) are split
//! per channel into patches, embedded with shared positional and per-channel
//! embeddings, padded to a fixed token count and encoded by a transformer
//! whose attention ignores the padding. The crate also carries the two
//! comparison encoders, a small self-distillation trainer, the downstream
//! evaluation harness and the file formats used by the `chada` CLI.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod model;
pub mod rng;
pub mod ssl;
pub mod tensor;
pub mod tokenizer;

pub use error::{Error, Result};
pub use image::MultiChannelImage;
pub use tensor::{Scalar, Tensor};
