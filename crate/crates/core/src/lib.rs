//! Stanford RRAM compact model simulation and automated extraction of its
//! six fitting parameters from I–V characteristics.
//!
//! The extraction flow is a warm start from a nearest-neighbor lookup over a
//! synthetic dataset, followed by three refinement blocks driven by an
//! adaptive binary search:
//!
//! 1. `gamma0` / `beta` to match the reset and set voltages, then an `i0`
//!    rescale;
//! 2. `v0` to match the LRS slope;
//! 3. `g0` to balance the LRS and HRS hysteresis areas.

pub mod dataset;
pub mod devices;
pub mod error;
pub mod estimator;
pub mod heuristics;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod search;
pub mod trace;

pub use error::{Error, Result};
pub use metrics::{NvmMetrics, SlopeRegion};
pub use model::{ModelParams, PhysicalConstants, PolarityOrder, SweepSpec};
pub use trace::{IVTrace, Sample};
