//! Temporally consistent matching, tracklet assembly and temporal Recall@K
//! evaluation for dynamic scene-graph generation.

pub mod assembler;
pub mod cli;
pub mod cost_matrix;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod par;
pub mod pseudo_id;
pub mod schema_io;
pub mod synth;
pub mod temporal_matcher;

pub use error::{Error, Result};
