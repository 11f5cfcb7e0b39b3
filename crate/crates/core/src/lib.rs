//! Simulation and verification laboratory for the two-dimensional
//! inverse-gamma directed polymer.
//!
//! The crate computes exact quenched quantities by log-space dynamic
//! programming, realizes semi-infinite polymer measures and their coalescence
//! couplings on finite boxes, and runs reproducible Monte Carlo experiments
//! for the model's scaling laws and exact identities.

pub mod env;
pub mod experiments;
pub mod lattice;
pub mod polymer;
pub mod quad;
pub mod semi;
pub mod special;
pub mod stats;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A structurally invalid request (wrong boundary, off-grid query, ...).
    #[error("usage error: {0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
