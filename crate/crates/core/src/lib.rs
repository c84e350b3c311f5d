//! Toy speech pipeline for studying how numeric precision interacts with
//! adversarial audio: a 16 kHz chord "language" and corpus generator, a small
//! recurrent recognizer whose forward pass can be run under emulated fp32,
//! fp16, or bf16 arithmetic, gradient-based attacks against it, and a
//! detector that scores how much a transcription varies across precisions.
//!
//! Everything is deterministic given its seeds: corpora, training, attacks,
//! and reports reproduce bit for bit on the same platform.

pub mod attacks;
pub mod data_io;
pub mod detector;
pub mod error;
pub mod metrics;
pub mod model;
pub mod precision;
pub mod psychoacoustics;
pub mod rng;
pub mod tensor;

#[cfg(test)]
pub(crate) mod test_fixtures;

pub use error::{Error, Result};
pub use precision::{quantize, quantize_buffer, PrecisionMode};
pub use tensor::{Gradients, NodeId, Tape, Tensor};
