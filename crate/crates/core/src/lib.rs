//! Adjustable robust transformer for high-myopia screening on OCT-like frames.
//!
//! * [`tensor`]: dense tensors and tape-based reverse-mode differentiation.
//! * [`vit`]: patch tiling, adjustable class embedding and the transformer.
//! * [`sst`]: shifted subspace transition matrix and training losses.
//! * [`synth`]: deterministic synthetic volumes and their file formats.
//! * [`train`]: biased labels, augmentation, optimizer, checkpoints.
//! * [`screen`]: volume decisions, uncertainty scores and δ sweeps.

pub mod error;
pub mod image;
pub mod screen;
pub mod sst;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod vit;

pub use error::{Error, Result};
pub use image::Image;
