//! Flowrate-pressure correlation models for multi-well reservoirs.
//!
//! Two engines share one data model: multiwell deconvolution, which fits
//! initial pressures and unit-rate transient responses, and the
//! capacitance resistance model. The [`bridge`] module maps the latter onto
//! the former exactly.

pub mod error;
pub mod bridge;
pub mod convolution;
pub mod crm;
pub mod mdcv;
pub mod report;
pub mod synthetic;
pub mod utr;
pub mod validation;
pub mod well_data;

pub use error::{Error, Result};
