//! Village maize yield diagnostics against the SDG 2.3 doubling target:
//! trend projection, cohort inequality, what-if growth scenarios, zone
//! ceilings and aggregation-error bootstraps.

pub mod analysis;
pub mod bootstrap;
pub mod equality;
pub mod error;
pub mod export;
pub mod feasibility;
pub mod ingest;
pub mod scenario;
pub mod snapshot;
pub mod stats;
pub mod synth;
pub mod trend;

pub use error::{Error, Result};
