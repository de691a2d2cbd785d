//! Stochastic two-level-system (TLS) bath coupled to mechanical modes:
//! bath generation, telegraph dynamics, spectrum-analyzer emulation and
//! correlation analysis.
//!
//! The numerical core is generic over the scalar type; [`f64`] is the default.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bath;
pub mod config;
pub mod detector;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Bath = bath::TlsBath<f64>;
pub type Mode = bath::MechanicalMode<f64>;
pub type Trace = dynamics::ShiftTrace<f64>;
pub type Rates = dynamics::RateTable<f64>;
