use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::{AgentId, Amount, ProcessId, Tick};

/// A SHA-256 digest, serialized as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Hash32(pub [u8; 32]);

impl Hash32 {
    pub fn of(bytes: &[u8]) -> Self {
        Hash32(Sha256::digest(bytes).into())
    }

    pub fn of_parts(parts: &[&[u8]]) -> Self {
        let mut h = Sha256::new();
        for part in parts {
            h.update(part);
        }
        Hash32(h.finalize().into())
    }
}

impl fmt::Debug for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash32({})", hex::encode(self.0))
    }
}

impl fmt::Display for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl Serialize for Hash32 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Hash32 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&text, &mut out).map_err(serde::de::Error::custom)?;
        Ok(Hash32(out))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub String);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        TaskId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    FirstQualified,
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub challenge_window: Tick,
    pub ruling_challenge_window: Tick,
    /// Odd, so that a full quorum always produces a strict majority.
    pub quorum_size: u32,
    /// Number of dispute levels allowed before escalation.
    pub max_recursion_depth: u32,
    pub solver_selection_policy: SelectionPolicy,
    pub escalation_target: Option<String>,
}

impl ConstraintSet {
    pub fn validate(&self) -> Result<(), String> {
        if self.challenge_window == 0 || self.ruling_challenge_window == 0 {
            return Err("challenge windows must be positive".into());
        }
        if self.quorum_size == 0 || self.quorum_size % 2 == 0 {
            return Err(format!("quorum_size must be odd, got {}", self.quorum_size));
        }
        if self.max_recursion_depth == 0 {
            return Err("max_recursion_depth must be at least 1".into());
        }
        Ok(())
    }
}

impl Default for ConstraintSet {
    fn default() -> Self {
        ConstraintSet {
            challenge_window: 10,
            ruling_challenge_window: 10,
            quorum_size: 1,
            max_recursion_depth: 2,
            solver_selection_policy: SelectionPolicy::FirstQualified,
            escalation_target: None,
        }
    }
}

/// A published task: constraints, intent and data, plus fee and bond terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub constraints: ConstraintSet,
    pub intent: String,
    pub data_payload: Vec<u8>,
    pub data_hash: Hash32,
    pub originator: AgentId,
    pub task_fee: Amount,
    pub required_solver_bond: Amount,
}

impl TaskSpec {
    pub fn new(
        task_id: impl Into<TaskId>,
        constraints: ConstraintSet,
        intent: impl Into<String>,
        data_payload: Vec<u8>,
        originator: AgentId,
        task_fee: Amount,
        required_solver_bond: Amount,
    ) -> Self {
        let data_hash = Hash32::of(&data_payload);
        TaskSpec {
            task_id: task_id.into(),
            constraints,
            intent: intent.into(),
            data_payload,
            data_hash,
            originator,
            task_fee,
            required_solver_bond,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.constraints.validate()?;
        if self.required_solver_bond == 0 {
            return Err("required_solver_bond must be positive".into());
        }
        if Hash32::of(&self.data_payload) != self.data_hash {
            return Err("data_hash does not match data_payload".into());
        }
        Ok(())
    }
}

impl From<String> for TaskId {
    fn from(s: String) -> Self {
        TaskId(s)
    }
}

/// The solver's output and supporting evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub task_id: TaskId,
    pub solver: AgentId,
    pub output: Vec<u8>,
    pub evidence: Vec<u8>,
    pub commitment: Hash32,
    pub submitted_at: Tick,
}

impl ResultRecord {
    pub fn new(
        task_id: TaskId,
        solver: AgentId,
        output: Vec<u8>,
        evidence: Vec<u8>,
        submitted_at: Tick,
    ) -> Self {
        let commitment = Self::commit(&output, &evidence);
        ResultRecord {
            task_id,
            solver,
            output,
            evidence,
            commitment,
            submitted_at,
        }
    }

    /// Length-prefixed so that the output/evidence boundary is unambiguous.
    pub fn commit(output: &[u8], evidence: &[u8]) -> Hash32 {
        Hash32::of_parts(&[&(output.len() as u64).to_be_bytes(), output, evidence])
    }

    pub fn commitment_is_valid(&self) -> bool {
        Self::commit(&self.output, &self.evidence) == self.commitment
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    UpholdTarget,
    OverturnTarget,
}

impl Verdict {
    pub fn negate(self) -> Verdict {
        match self {
            Verdict::UpholdTarget => Verdict::OverturnTarget,
            Verdict::OverturnTarget => Verdict::UpholdTarget,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Verdict::UpholdTarget => 0,
            Verdict::OverturnTarget => 1,
        }
    }
}

/// Binding commitment to a verdict: `sha256(verdict_tag || salt)`.
pub fn verdict_commitment(verdict: Verdict, salt: &[u8]) -> Hash32 {
    Hash32::of_parts(&[&[verdict.tag()], salt])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    ResultStands,
    ResultOverturned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DisputeId {
    pub process: ProcessId,
    pub depth: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DisputeTarget {
    Result,
    /// The ruling issued at `depth`.
    Ruling {
        depth: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisputeRecord {
    pub dispute_id: DisputeId,
    pub depth: u32,
    pub target: DisputeTarget,
    pub challenger: AgentId,
    pub adversarial_evidence: Vec<u8>,
    pub challenger_bond: Amount,
    pub opened_at: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reveal {
    pub verdict: Verdict,
    pub salt: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RulingRecord {
    pub dispute_id: DisputeId,
    pub quorum: Vec<AgentId>,
    pub commitments: BTreeMap<AgentId, Hash32>,
    pub reveals: BTreeMap<AgentId, Reveal>,
    pub verdict: Verdict,
    /// No valid reveal: the ruling defaults to upholding its target.
    pub void: bool,
    pub verifier_exposure: BTreeMap<AgentId, Amount>,
    pub issued_at: Tick,
}

impl RulingRecord {
    pub fn non_revealers(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.quorum
            .iter()
            .copied()
            .filter(|v| !self.reveals.contains_key(v))
    }
}

/// Lifecycle phase of one process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    IntentPublished,
    SolverSelected,
    /// Depth 0: the result itself is open to challenge.
    ChallengeWindowOpen,
    UnderVerification {
        depth: u32,
    },
    RulingWindowOpen {
        depth: u32,
    },
    Finalized(Outcome),
    Escalated,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Finalized(_) | Phase::Escalated)
    }

    pub fn parse(text: &str) -> Option<Phase> {
        let inner = |prefix: &str| text.strip_prefix(prefix)?.strip_suffix(')');
        Some(match text {
            "IntentPublished" => Phase::IntentPublished,
            "SolverSelected" => Phase::SolverSelected,
            "ChallengeWindowOpen" => Phase::ChallengeWindowOpen,
            "Escalated" => Phase::Escalated,
            "Finalized(ResultStands)" => Phase::Finalized(Outcome::ResultStands),
            "Finalized(ResultOverturned)" => Phase::Finalized(Outcome::ResultOverturned),
            _ => {
                if let Some(d) = inner("UnderVerification(") {
                    Phase::UnderVerification {
                        depth: d.parse().ok()?,
                    }
                } else if let Some(d) = inner("RulingWindowOpen(") {
                    Phase::RulingWindowOpen {
                        depth: d.parse().ok()?,
                    }
                } else {
                    return None;
                }
            }
        })
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::IntentPublished => f.write_str("IntentPublished"),
            Phase::SolverSelected => f.write_str("SolverSelected"),
            Phase::ChallengeWindowOpen => f.write_str("ChallengeWindowOpen"),
            Phase::UnderVerification { depth } => write!(f, "UnderVerification({depth})"),
            Phase::RulingWindowOpen { depth } => write!(f, "RulingWindowOpen({depth})"),
            Phase::Finalized(o) => write!(f, "Finalized({o:?})"),
            Phase::Escalated => f.write_str("Escalated"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessState {
    pub phase: Phase,
    /// Depth a new dispute would be opened at.
    pub current_depth: u32,
    /// Present exactly while a challenge window is open.
    pub window_deadline: Option<Tick>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EscalationReason {
    DepthExhausted,
    VerifierScarcity,
}

/// Emitted when a process is handed to a higher settlement layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscalationRecord {
    pub process: ProcessId,
    pub target: String,
    pub depth: u32,
    pub reason: EscalationReason,
    pub frozen_escrows: Vec<(crate::ledger::EscrowKey, Amount)>,
    pub standing: Outcome,
    pub escalated_at: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: Phase,
    pub to: Phase,
}
