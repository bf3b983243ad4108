//! Anti-aliased factorized-grid radiance fields.
//!
//! A shared vector-matrix or tri-plane feature grid is expanded into a bank of
//! multi-scale grids by learnable depth-wise convolutions. Rays carry a
//! scale-aware coordinate that selects (and blends between) the generated
//! scales, so the same scene renders without "jaggies" across resolutions.
//! Everything is trained end-to-end through emission-absorption volume
//! rendering with hand-written reverse-mode gradients that are validated
//! against central finite differences.

pub mod cli;
pub mod data;
pub mod error;
pub mod factor_grids;
pub mod field;
pub mod mipgen;
pub mod render;
pub mod scalecoord;
pub mod train;

pub use error::{Error, Result};
