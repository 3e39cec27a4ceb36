//! Radar-camera fusion detector in bird's-eye view.
//!
//! Radar BEV features are lifted into height-segmented queries, refined by
//! deformable cross-attention over camera features, gated back into the radar
//! map and decoded by a polar center-point head.

pub mod boxes;
pub mod config;
pub mod dataio;
pub mod detection;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod model;
pub mod train;

pub use boxes::{Box3D, ObjectClass};
pub use config::{AblationMode, RunConfig};
pub use error::{Error, Result};
