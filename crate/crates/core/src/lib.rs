//! Planning and simulation toolkit for strong-scaling DNN training.
//!
//! The crate is `no_std` (with `alloc`) and contains only pure computation:
//!
//! * [`graph`]: computation graphs, per-layer profiles and series-parallel
//!   decomposition into branch/join blocks.
//! * [`cost`]: compute, communication, synchronization and transition costs,
//!   plus GPU-sec amplification.
//! * [`planner`]: the per-layer GPU assignment search (linear dynamic program,
//!   multi-chain reduction, backtrace) and an exhaustive oracle.
//! * [`scaling`]: weak / strong / batch-optimal time-to-accuracy estimates.
//! * [`sim`]: a deterministic discrete-event model of foreground/background
//!   GPU multiplexing.
//! * [`synth`]: deterministic synthetic model families, sample-efficiency
//!   curves and interference tables.
//!
//! File formats, the command line and wall-clock measurements live in the
//! `burstpar` companion crate.
#![no_std]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod cost;
pub mod error;
pub mod graph;
pub mod planner;
pub mod scaling;
pub mod sim;
pub mod synth;

mod math;

pub use cost::{CostContext, LayerCost, NetworkProfile};
pub use error::{Error, Result};
pub use graph::{Block, BlockDecomposition, CompGraph, Layer, LayerId, LayerProfile, ProfileEntry};
pub use planner::{plan, PlanTables, TrainingPlan};
