//! Simulation and ergodicity certificates for continuous-state branching
//! processes with immigration and competition.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod ergodicity;
pub mod error;
pub mod generator;
pub mod levy;
pub mod measures;
pub mod mechanisms;
pub mod quadrature;
pub mod simulator;

pub use error::{Error, Result};
