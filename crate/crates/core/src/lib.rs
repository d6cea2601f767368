//! Multi-target direction-of-arrival estimation from the spatially resolved
//! fluorescence of a single Rydberg vapor cell.
//!
//! The pipeline runs bottom-up through the modules:
//! [`physics`] (field and absorption) → [`sensing`] (readout, windows,
//! calibration, noise) → [`estimation`] (Prony) and [`crlb`] (bounds), with
//! [`experiments`] driving Monte Carlo sweeps.

// `!(x > 0.0)` is the NaN-rejecting form used throughout for validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crlb;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod physics;
pub mod sensing;

pub use error::{IseError, Result};
