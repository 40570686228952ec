//! Fault-tolerant flight control toolkit for a dual-system VTOL UAV in
//! transition flight.
//!
//! The toolkit wires four pieces together:
//!
//! - [`allocator`]: online weighted-least-squares control allocation over an
//!   effectiveness-weighted, airspeed-dependent allocation matrix, solved by
//!   an active-set bounded least-squares method.
//! - [`control`]: the P-PID cascade baseline law (altitude plus three
//!   attitude channels) and the mixed-sensitivity weighting functions.
//! - [`synthesis`]: fixed-structure mixed-sensitivity gain tuning and a
//!   robust-stability verdict over the actuator-loss box.
//! - [`dynamics`] + [`scenario`]: a 6-DOF nonlinear simulator with fault
//!   injection, the transition-mission state machine, metrics and CSV export.
//!
//! [`vehicle`] and [`effectors`] hold the vehicle data model and the
//! command-to-wrench maps that everything else is built on.

pub mod allocator;
pub mod control;
pub mod dynamics;
pub mod effectors;
pub mod scenario;
pub mod synthesis;
pub mod vehicle;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
    #[error("fault events must be sorted by time (event at {0} s follows one at {1} s)")]
    UnsortedFaults(f64, f64),
    #[error("scenario validation failed at `{field}`: {message}")]
    Scenario { field: String, message: String },
    #[error("scenario document parse error: {0}")]
    Parse(String),
    #[error("no stabilizing gains found for loop `{0}` within the evaluation budget")]
    TuningFailed(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("trace mismatch: {0}")]
    TraceMismatch(String),
    #[error("vehicle infeasible: {0}")]
    Infeasible(String),
    #[error("i/o error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
