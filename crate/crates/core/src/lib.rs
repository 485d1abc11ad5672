//! Spiked population models, their random-matrix limits, and the simulation
//! primitives needed to check them.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod limits;
pub mod model;
pub mod rmt;
pub mod sim;

pub use error::{Error, Result};
pub use model::{MatrixKind, Mode, PopulationModel, Spike, SpikeSet, Structure};
pub use sim::SourceDistribution;
