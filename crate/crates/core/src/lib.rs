//! Fault-path characterization of error-corrected cycles, syndrome-conditioned logical
//! channels, and the mitigation estimators built on them.

pub mod analytics;
pub mod cli;
pub mod error;
pub mod ftcircuit;
pub mod mitigation;
pub mod p2lc;
pub mod pauli;
pub mod steane;
pub mod surface;

pub use error::{Result, SalemError};
