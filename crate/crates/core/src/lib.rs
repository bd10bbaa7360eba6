//! Loose depth conditions for depth-conditioned image generators.
//!
//! The crate extracts scene-boundary depth (a per-pixel upper bound) and
//! 3D-box proxy depth from estimated depth maps, renders both from authored
//! scenes, checks generated depth against a condition, and carries small,
//! model-free versions of the editing numerics (low-rank adapters, Jacobian
//! edit directions, key/value-shared attention).

pub mod cli;
pub mod edit;
pub mod error;
pub mod geom;
pub mod io;
pub mod pipeline;
pub mod raster;
pub mod service;

pub use error::{Error, Result};
