//! Exponential-tilt fingerprinting toolkit.
//!
//! The crate builds structured point ensembles ([`families`]), tilts them
//! ([`tilt`]), releases means and histograms under privacy accounting
//! ([`mechanisms`]), attacks those releases with score statistics
//! ([`attack`]), runs the staged adaptive adversary ([`ada`]) and checks the
//! random-matrix and Rademacher-sum properties the attacks rely on ([`structure`]).

pub mod ada;
pub mod attack;
pub mod error;
pub mod families;
pub mod linalg;
pub mod lp;
pub mod mechanisms;
pub mod seed;
pub mod stats;
pub mod structure;
pub mod tilt;

pub use error::{Error, Result};
