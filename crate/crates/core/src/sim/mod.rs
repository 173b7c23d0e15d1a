//! Deterministic discrete-event simulation of task streams, with parameter
//! sweeps, Monte Carlo estimators and log replay.

pub mod checkeq;
pub mod config;
pub mod metrics;
pub mod montecarlo;
pub mod replay;
pub mod run;
pub mod sweep;

pub use checkeq::{check_eq, CheckEqRow};
pub use config::{ConfigError, ScenarioConfig, DEFAULT_SEED};
pub use metrics::RunMetrics;
pub use montecarlo::{monte_carlo_ev, EpisodeParams, Estimate, EstimatorRole};
pub use replay::{replay, ReplayError, ReplayState};
pub use run::{run, run_observed, RunOutput, SimError};
pub use sweep::{sweep, SweepAxis, SweepRow};
