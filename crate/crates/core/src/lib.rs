//! Flow-equivariant recurrent networks on cyclic grids.
//!
//! The crate provides exact group actions on discretized signals, the lifting,
//! group and flow convolutions built on them, G-RNN and FERNN recurrences with
//! hand-written backpropagation through time, synthetic flowing-sprite data,
//! and a CLI that runs equivariance checks and desk-scale experiments.

pub mod cli;
pub mod conv;
pub mod data;
pub mod equivariance;
pub mod error;
pub mod grid_signal;
pub mod io;
pub mod group_flow;
pub mod learn;
pub mod rnn;

pub use error::{Error, Result};
