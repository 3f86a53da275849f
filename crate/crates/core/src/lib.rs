//! Ensemble-averaged, mixed-horizon, optionally pessimistic return estimation
//! for latent-model MPPI planning, with replay, reanalyze and a compact trainer.

pub mod analysis;
pub mod config;
pub mod envs;
pub mod error;
pub mod io;
pub mod planner;
pub mod replay;
pub mod returns;
pub mod tape;
pub mod trainer;
pub mod worldmodel;

pub use error::{Error, Result};
