//! Simulation and identification of the time-varying impulse responses seen
//! by an in-ear microphone while a speaker array rotates continuously.
//!
//! The pipeline is: [`signals`] builds the perfect-sweep excitation,
//! [`scenario`] renders the recording from a ground-truth trajectory,
//! [`identifiers`] and [`neural`] recover `ĥ_n`, and [`metrics`] scores it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod identifiers;
pub mod io;
pub mod metrics;
pub mod neural;
pub mod scenario;
pub mod signals;

pub use error::{Error, Result};
