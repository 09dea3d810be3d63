//! MR Fingerprinting simulation and reconstruction toolkit.
//!
//! The crate covers the full synthetic experiment loop: spin simulation and
//! dictionary construction, temporal-subspace estimation, a procedural
//! phantom, spiral/Cartesian undersampled multi-coil encoding, the baseline
//! low-rank-and-subspace reconstruction, a subspace reconstruction
//! regularized by an untrained convolutional generator and solved by ADMM,
//! dictionary matching, and evaluation utilities.

pub mod container;
pub mod encoding;
pub mod error;
pub mod linalg;
pub mod phantom;
pub mod spin;
pub mod subspace;
pub mod types;

pub use error::{MrfError, Result};
pub use types::{CasoratiImage, Grid, SpatialCoefficients};
