//! Cross-temporal Gaussian splatting.
//!
//! Brings a sparsely observed capture of a scene into the frame of an earlier,
//! densely observed capture, estimates which regions are unchanged, and trains an
//! updated Gaussian model that reuses the earlier images where they still apply.

pub mod confidence;
pub mod error;
pub mod geometry;
pub mod image;
pub mod io;
pub mod metrics;
pub mod optimizer;
pub mod registration;
pub mod spatial;
pub mod splat;

pub use error::{Error, Result};
