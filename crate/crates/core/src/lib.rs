//! Collective target tracking for populations of electric space heaters.
//!
//! Each heater solves a discounted LQG problem whose tracking weight is the
//! absolute running integral of a pressure function of the population mean;
//! the mean, in turn, is the closed-loop response of all heaters. The crate
//! solves the resulting mean-field fixed point, searches desirable near
//! fixed points over the pressure gain, and validates the controllers by
//! simulating finite populations.

pub mod config;
pub mod error;
pub mod export;
pub mod grid;
pub mod lqg;
pub mod near_fp;
pub mod operators;
pub mod population;
pub mod runner;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
pub use grid::{TimeGrid, Trajectory};
