//! Flow-matching path generation with a prediction-correction integrator and
//! finite-time control-barrier-function certificates.
//!
//! The flow runs noise to plans. The prediction phase integrates the field
//! without constraints; the correction phase restarts the clock, integrates
//! the vanishing time-scaled field `alpha (1 - t) v_t` and filters every
//! waypoint velocity through a small CBF-QP. The `certificates` module checks
//! the resulting traces after the fact.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificates;
pub mod env;
pub mod error;
pub mod experiment;
pub mod fields;
pub mod integrators;
pub mod metrics;
pub mod safety;
pub mod store;
pub mod trajectory;

pub use error::{Error, Result};
pub use trajectory::{Path, RunConfig, TimeGrid};
