//! Simulator and pulse-design toolkit for magnetic-resonance control of a
//! quasi-1D spin-1 condensate: hyperbolic-secant slice transfer pulses,
//! spin-1 mean-field dynamics, and dark-soliton analysis.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod ground;
pub mod protocol;
pub mod pulse;
pub mod spf1;
pub mod spin;
pub mod spinor;
pub mod units;

pub use error::{Error, Result};
