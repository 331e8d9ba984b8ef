//! Knowledge-capital risk simulation.
//!
//! Three capital stocks (human, structural, relational) follow linear
//! growth/decay flows hit by Poisson-arriving shocks; four risk levers boost
//! growth channels and cushion shocks. The crate simulates that model
//! exactly, summarizes Monte Carlo ensembles, and calibrates base parameters
//! against target statistics.

pub mod calibration;
pub mod cli;
pub mod engine;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scenario;

pub use engine::{run_ensemble, EnsembleResult, PathRecord, RunConfig, K_STAR};
pub use error::{Error, Result};
pub use metrics::TerminalStats;
pub use model::{CapitalState, Component, EffectiveParams, LeverGains, LeverVector, ModelParams, Weights};
pub use scenario::ScenarioSpec;
