//! Task lifecycle state machine.
//!
//! A process moves `IntentPublished -> SolverSelected -> ChallengeWindowOpen`,
//! then alternates `UnderVerification(t)` and `RulingWindowOpen(t)` for each
//! dispute level until a window expires unchallenged (`Finalized`) or the
//! chain runs out of depth or verifiers (`Escalated`, or `Finalized` when no
//! escalation target is configured).

pub mod chain;
mod engine;
mod types;

use thiserror::Error;

pub use crate::ledger::SettlementPlan;
pub use engine::{Adjudication, Candidate, Engine, EngineParams, Level, Process};
pub use types::*;

use crate::economics::EconomicsError;
use crate::ledger::LedgerError;
use crate::{AgentId, Amount, ProcessId, Tick};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("unknown {0}")]
    UnknownProcess(ProcessId),
    #[error("{op} is not allowed in phase {phase}")]
    WrongPhase { op: &'static str, phase: Phase },
    #[error("invalid engine parameters: {0}")]
    InvalidParams(String),
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("task id {0} already published")]
    DuplicateTask(TaskId),
    #[error("bond {offered} below the required {required}")]
    BondTooSmall { offered: Amount, required: Amount },
    #[error("{0} already registered a commitment")]
    DuplicateCommitment(AgentId),
    #[error("no candidate can cover its bond")]
    EmptyPool,
    #[error("{0} is not the selected solver")]
    NotTheSolver(AgentId),
    #[error("invalid result: {0}")]
    InvalidResult(String),
    #[error("challenge window closed at tick {deadline} (now {now})")]
    WindowClosed { deadline: Tick, now: Tick },
    #[error("{0} may not challenge its own claim")]
    SelfChallenge(AgentId),
    #[error("depth {depth} exhausts max recursion depth {max}")]
    DepthExhausted { depth: u32, max: u32 },
    #[error("{eligible} eligible verifiers, quorum needs {required}")]
    InsufficientVerifiers { eligible: usize, required: usize },
    #[error("{0} is not in the quorum")]
    NotInQuorum(AgentId),
    #[error("{0} already committed")]
    DuplicateCommit(AgentId),
    #[error("deadline {deadline} passed (now {now})")]
    DeadlinePassed { deadline: Tick, now: Tick },
    #[error("{0} has no commitment to reveal")]
    NoCommitment(AgentId),
    #[error("reveal by {0} does not match its commitment")]
    CommitMismatch(AgentId),
    #[error("{0} already revealed")]
    DuplicateReveal(AgentId),
    #[error("reveals open when all members commit or the commit deadline passes")]
    RevealNotOpen,
    #[error("ruling not ready before tick {reveal_deadline} (now {now})")]
    RulingNotReady { reveal_deadline: Tick, now: Tick },
    #[error("quorum already selected")]
    QuorumAlreadySelected,
    #[error("quorum not selected yet")]
    QuorumNotSelected,
    #[error("escalation is not warranted")]
    EscalationNotWarranted,
    #[error("{0} is already settled")]
    AlreadySettled(ProcessId),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Economics(#[from] EconomicsError),
}

impl ProtocolError {
    pub fn is_wrong_phase(&self) -> bool {
        matches!(self, ProtocolError::WrongPhase { .. })
    }
}

pub type Result<T, E = ProtocolError> = std::result::Result<T, E>;
