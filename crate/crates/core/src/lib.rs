//! Region-level shopping pattern prediction.
//!
//! Sparse region shopping intensities are completed by a collective matrix
//! factorization that shares region lifestyles with dense mobility
//! intensities, regularized so that each region's lifestyle stays close to
//! the gravity-weighted average of the regions it exchanges travellers with.

pub mod error;
pub mod eval;
pub mod factorize;
pub mod gravity;
pub mod grid;
pub mod nmf;
mod ols;
pub mod patterns;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
