//! Constrained Bayesian hyperparameter search for spiking neural networks.
//!
//! The crate couples a trust-region Bayesian optimizer with Thompson-sampling
//! acquisition (`scbo`, `gp`) to a desk-scale spiking-network simulator
//! (`snn`) whose trainings are cut short by a spike-count early-stopping rule
//! (`earlystop`). Stopping statistics double as constraint violations, so the
//! optimizer learns to avoid regions of the search space that produce silent
//! or degenerate networks. An asynchronous scheduler (`scheduler`) farms
//! trials out to worker threads and appends crash-durable log records, and the
//! `report` module recomputes summaries from those logs.

pub mod config;
pub mod earlystop;
pub mod error;
pub mod gp;
pub mod report;
pub mod scbo;
pub mod scheduler;
pub mod seeding;
pub mod snn;
pub mod space;

pub use error::{Error, Result};
