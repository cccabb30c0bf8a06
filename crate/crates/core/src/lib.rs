//! Scale-free option price prediction that holds up under shifts in the
//! underlying's return distribution.
//!
//! The pipeline: [`ingest`] cleans option-chain CSVs, [`features`] and
//! [`dataset`] build the 23-column feature rows, [`targets`] defines the
//! normalised-price (HH) and volatility-normalised (DS) targets, [`gbt`] fits
//! boosted trees, [`ensemble`] blends the two predictions by the domain shift
//! quotient, and [`evaluation`] scores everything on the normalised-price
//! scale. [`synthlab`] generates GBM markets for controlled stress tests and
//! [`pricing`] holds the BSM and implied-volatility machinery.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod gbt;
pub mod ingest;
pub mod pipeline;
pub mod pricing;
pub mod rundir;
pub mod synthlab;
pub mod targets;

pub use error::{Error, Result};
