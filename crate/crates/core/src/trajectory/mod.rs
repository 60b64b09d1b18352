//! Paths, time grids, run configuration and seeded sampling.

mod config;
mod grid;
mod path;
pub mod rng;

pub use config::{DatasetSpec, FieldSpec, Method, RunConfig};
pub use grid::TimeGrid;
pub use path::Path;
pub use rng::{sample_prior, stream_rng, SeededRng};
