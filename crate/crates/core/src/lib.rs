//! A collateralized verification game.
//!
//! Solvers bond collateral to execute published tasks, any challenger may
//! stake against a submitted result, and bonded verifier quorums rule on the
//! dispute through commit-reveal. Rulings are themselves challengeable, and
//! the deepest surviving ruling decides the outcome. Incorrect parties are
//! slashed; correct opposition is rewarded.
//!
//! Modules:
//! - [`economics`]: falsification condition, expected values, bond sizing.
//! - [`ledger`]: integer escrow accounting with exact conservation.
//! - [`protocol`]: the task lifecycle state machine and settlement planning.
//! - [`agents`]: solver, challenger and verifier strategies, deviation tests.
//! - [`sim`]: deterministic discrete-event simulator, sweeps, replay.
//! - [`eventlog`]: the hash-chained line-delimited event log.
//!
//! The math is generic over [`Scalar`]; the aliases below pin the common
//! instantiations.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod agents;
pub mod economics;
pub mod eventlog;
pub mod ledger;
pub mod protocol;
pub mod scalar;
pub mod sim;

pub use scalar::Scalar;

/// Whole token units.
pub type Amount = u64;

/// Logical time. The protocol never reads a clock.
pub type Tick = u64;

/// Floating-point scalar used by the simulator and the CLI.
pub type Real = f64;

/// Exact rational scalar.
pub type Exact = num_rational::BigRational;

pub type FalsificationParams = economics::FalsificationParams<Real>;
pub type RecursionSchedule = economics::RecursionSchedule<Real>;
pub type BondSizingPolicy = economics::BondSizingPolicy<Real>;
pub type ExactBondSizingPolicy = economics::BondSizingPolicy<Exact>;
pub type Engine = protocol::Engine<Real>;
pub type ExactEngine = protocol::Engine<Exact>;
pub type EngineParams = protocol::EngineParams<Real>;
pub type AgentProfile = agents::AgentProfile<Real>;
pub type DeviationScenario = agents::DeviationScenario<Real>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(pub u64);

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "process-{}", self.0)
    }
}
