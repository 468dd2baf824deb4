//! Detection of radiation impacts on a superconducting qubit from a fast
//! repeated-decay readout stream.
//!
//! The chain runs from a stochastic model of the readout protocol, through
//! I/Q state discrimination and a run-of-zeros trigger, to binomial event
//! selection, live-time rates and expected-rate budgets.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod config;
pub mod discrimination;
pub mod error;
pub mod pipeline;
pub mod protocol;
pub mod rates;
pub mod reference;
pub mod rng;
pub mod selection;
pub mod stats;
pub mod tracefile;
pub mod trigger;

pub use error::{Error, Result};
