//! Energy-zone channel importance for CNN pruning.
//!
//! Feature-map slices are scored in the frequency domain by how much of their
//! spectral magnitude lies outside a small square around the DC bin. The crate
//! also carries the numerical-rank baseline, pruning plans that compose over
//! repeated passes, the on-disk formats for dumps, scores and plans, and a
//! timing harness comparing the two metrics.

pub mod bench;
pub mod cli;
pub mod error;
pub mod importance;
pub mod io;
pub mod pruner;
pub mod rank;
pub mod report;
pub mod spectral;
pub mod stats;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
