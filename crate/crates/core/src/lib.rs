//! Simulation toolkit for wireless body-area-network physical and link layers.
//!
//! The crate is organised by subsystem:
//!
//! * [`sigproc`] – modulation, AWGN, BER and MSE metrics.
//! * [`channels`] – clustered on-body/indoor channel generators, path loss and
//!   hyperbolic scatterer geometry.
//! * [`equalize`] – multiuser synthesis, Wiener/DFE receivers and blind CMA.
//! * [`linkadapt`] – threshold-driven rate adaptation over beacon rounds.
//! * [`zigbee`] – tree addressing and the two broadcast strategies.
//! * [`harness`] – configuration files, result tables, SVG plots and the
//!   experiment runners used by the `bansim` CLI.
//!
//! Every stochastic operation takes a [`Seed`]; identical inputs and seed
//! give bit-identical output.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channels;
pub mod equalize;
pub mod error;
pub mod harness;
pub mod linkadapt;
mod linalg;
pub mod rng;
pub mod sigproc;
pub mod zigbee;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
pub use rng::Seed;
pub use sigproc::{BitStream, Modulation, ModulationScheme, SymbolStream};
