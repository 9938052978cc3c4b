//! Quality-adaptive video streaming over a small-cell helper network.
//!
//! Helpers cache the whole library and stream chunks to nearby users over a
//! shared interference-limited channel. Each user picks a helper and a
//! quality mode per chunk, each helper serves one user per slot, and a
//! drift-plus-penalty controller trades average quality against backlog.

pub mod channel;
pub mod config;
pub mod control;
pub mod error;
pub mod metrics;
pub mod output;
pub mod playback;
mod seed;
pub mod sim;
pub mod topology;
pub mod video;

pub use error::{Error, Result};
pub use sim::{run, SimConfig, Simulation};
