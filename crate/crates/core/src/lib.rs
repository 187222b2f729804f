//! Arbitrary-scale face super-resolution built on a local implicit image
//! function.
//!
//! The crate is `no_std` (with `alloc`). Everything here is pure computation:
//! a small reverse-mode differentiation engine, image resampling and color
//! math, the encoder / local-frequency / implicit-decoder networks, the
//! training loop and the quality metrics. File formats, checkpoints on disk
//! and the command line live in the `fsr` companion crate.
#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

mod error;
pub mod tensor;

pub mod image;

pub mod params;

pub mod decoder;
pub mod encoder;
pub mod lfe;
pub mod model;

pub mod trainer;

pub mod eval;
pub mod gradcheck;
pub mod metrics;
pub mod synthetic;

pub use error::{Error, Result};
pub use image::{CoordGrid, Image};
pub use model::{Model, ModelConfig, Variant};
pub use tensor::{Gradients, Graph, Tensor, Var};
pub use trainer::{Checkpoint, TrainConfig};
