//! Simulation and analysis of two-photon interference between independent
//! cavity-coupled quantum dots on one chip.
//!
//! - [`model`]: analytic parallel/orthogonal correlation functions.
//! - [`photon_sim`]: Monte-Carlo photon streams through the interferometer.
//! - [`correlator`]: timestamp correlation histograms and g² estimators.
//! - [`spectra`]: photoluminescence spectra, Lorentzian fits, polarization.
//! - [`tuning`]: gas tuning of cavities and thermal tuning of dots.
//! - [`budget`]: coupling and collection efficiency arithmetic.

// `!(x > 0.0)` is the NaN-rejecting validation idiom throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod config;
pub mod correlator;
pub mod error;
pub mod fit;
pub mod hom_fit;
pub mod io;
pub mod model;
pub mod photon_sim;
pub mod provenance;
pub mod report;
pub mod seed;
pub mod spectra;
pub mod ttag;
pub mod tuning;

pub use error::{Error, Result};
