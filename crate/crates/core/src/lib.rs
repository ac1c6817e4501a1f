//! Probabilistic constellation shaping for OFDM integrated sensing and
//! communication.

pub mod cli;
pub mod comms_metrics;
pub mod config;
pub mod constellation;
pub mod detection;
pub mod error;
pub mod numfmt;
pub mod ofdm_af;
pub mod pcs_heuristic;
pub mod pcs_optimal;
pub mod seeds;

pub use constellation::{Constellation, Distribution, Family, RingSpec};
pub use error::{Error, Result};
