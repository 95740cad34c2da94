//! Joint 4× super-resolution and six-class semantic segmentation.
//!
//! A single generator produces an upscaled image and, from a shared trunk,
//! per-pixel class scores at input resolution. The segmentation loss is
//! masked out near class boundaries.

mod error;

pub mod boundary_mask;
pub mod data;
pub mod eval;
pub mod losses;
pub mod model;
pub mod pixels;
pub mod tensor_io;
pub mod trainer;

pub use error::{Error, Result};
