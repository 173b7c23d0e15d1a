use std::collections::{BTreeMap, BTreeSet};

use num_rational::BigRational;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::chain;
use super::types::*;
use super::{ProtocolError, Result};
use crate::economics::{self, BondSizingPolicy};
use crate::eventlog::{EventLog, RecordKind};
use crate::ledger::{EscrowKey, EscrowPurpose, Ledger, LedgerEntry, LedgerError, SettlementPlan};
use crate::scalar::{self, Scalar};
use crate::{AgentId, Amount, ProcessId, Tick};

/// Protocol-wide parameters shared by every process an engine runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineParams<S> {
    pub policy: BondSizingPolicy<S>,
    /// Share of a slashed stake paid to the prevailing counterparty; the
    /// rest is burned.
    pub reward_share: S,
    pub commit_window: Tick,
    pub reveal_window: Tick,
}

impl<S: Scalar> EngineParams<S> {
    /// `mu = 0.5`, verifier floor 1 plus 10% of stake doubling per level,
    /// `reward_share = 0.5`, two-tick commit and reveal windows.
    pub fn standard() -> Self {
        let f = |x: f64| S::from_f64(x).expect("small constants are representable");
        EngineParams {
            policy: BondSizingPolicy {
                challenger_multiplier: f(0.5),
                verifier_floor: 1,
                verifier_fraction: f(0.1),
                depth_share_growth: f(2.0),
            },
            reward_share: f(0.5),
            commit_window: 2,
            reveal_window: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Candidate {
    pub agent: AgentId,
    pub bond: Amount,
    pub registered_at: Tick,
}

/// Commit-reveal round of a quorum on the open dispute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjudication {
    pub quorum: Vec<AgentId>,
    pub exposure: BTreeMap<AgentId, Amount>,
    pub commitments: BTreeMap<AgentId, Hash32>,
    pub reveals: BTreeMap<AgentId, Reveal>,
    pub commit_deadline: Tick,
    pub reveal_deadline: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Level {
    pub dispute: DisputeRecord,
    pub adjudication: Option<Adjudication>,
    pub ruling: Option<RulingRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Process {
    pub id: ProcessId,
    pub spec: TaskSpec,
    pub state: ProcessState,
    pub candidates: Vec<Candidate>,
    pub solver: Option<(AgentId, Amount)>,
    pub result: Option<ResultRecord>,
    pub levels: Vec<Level>,
    pub escalation: Option<EscalationRecord>,
    pub settled: bool,
}

impl Process {
    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn solver(&self) -> Option<AgentId> {
        self.solver.map(|(a, _)| a)
    }

    pub fn rulings(&self) -> impl Iterator<Item = &RulingRecord> {
        self.levels.iter().filter_map(|l| l.ruling.as_ref())
    }

    pub fn open_level(&self) -> Option<&Level> {
        match self.state.phase {
            Phase::UnderVerification { .. } => self.levels.last(),
            _ => None,
        }
    }

    fn verdicts(&self) -> Vec<Verdict> {
        self.rulings().map(|r| r.verdict).collect()
    }

    /// Agents barred from adjudicating this process's open dispute.
    fn conflicted(&self) -> BTreeSet<AgentId> {
        let mut out: BTreeSet<AgentId> = self.solver().into_iter().collect();
        for level in &self.levels {
            out.insert(level.dispute.challenger);
            if let Some(a) = &level.adjudication {
                out.extend(a.quorum.iter().copied());
            }
        }
        out
    }
}

/// Runs any number of task processes against one shared ledger.
///
/// Every operation is atomic: it either succeeds and appends its records to
/// the event log, or fails leaving engine, ledger and log untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct Engine<S> {
    params: EngineParams<S>,
    reward_share: BigRational,
    ledger: Ledger,
    processes: BTreeMap<ProcessId, Process>,
    task_ids: BTreeSet<TaskId>,
    verifiers: BTreeMap<AgentId, Amount>,
    log: EventLog,
    next_process: u64,
}

#[derive(Serialize)]
struct PublishPayload<'a> {
    task_id: &'a TaskId,
    originator: AgentId,
    task_fee: Amount,
    required_solver_bond: Amount,
    data_hash: Hash32,
    constraints: &'a ConstraintSet,
}

#[derive(Serialize)]
struct AgentPayload {
    agent: AgentId,
    amount: Amount,
}

#[derive(Serialize)]
struct CommitPayload {
    verifier: AgentId,
    commitment: Hash32,
}

#[derive(Serialize)]
struct RevealPayload<'a> {
    verifier: AgentId,
    reveal: &'a Reveal,
}

impl<S: Scalar> Engine<S> {
    pub fn new(params: EngineParams<S>) -> Result<Self> {
        Self::with_log(params, EventLog::new())
    }

    pub fn with_log(params: EngineParams<S>, log: EventLog) -> Result<Self> {
        params.policy.validate()?;
        let reward_share = params
            .reward_share
            .to_exact()
            .filter(scalar::is_unit_interval)
            .ok_or_else(|| {
                ProtocolError::InvalidParams("reward_share must lie in [0, 1]".into())
            })?;
        if params.commit_window == 0 || params.reveal_window == 0 {
            return Err(ProtocolError::InvalidParams(
                "commit and reveal windows must be positive".into(),
            ));
        }
        Ok(Engine {
            params,
            reward_share,
            ledger: Ledger::new(),
            processes: BTreeMap::new(),
            task_ids: BTreeSet::new(),
            verifiers: BTreeMap::new(),
            log,
            next_process: 0,
        })
    }

    pub fn params(&self) -> &EngineParams<S> {
        &self.params
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    /// For callers that interleave their own records with the engine's.
    pub fn log_mut(&mut self) -> &mut EventLog {
        &mut self.log
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    pub fn process(&self, pid: ProcessId) -> Result<&Process> {
        self.processes
            .get(&pid)
            .ok_or(ProtocolError::UnknownProcess(pid))
    }

    pub fn processes(&self) -> impl Iterator<Item = &Process> {
        self.processes.values()
    }

    pub fn state(&self, pid: ProcessId) -> Result<ProcessState> {
        Ok(self.process(pid)?.state)
    }

    pub fn verifier_pool(&self) -> &BTreeMap<AgentId, Amount> {
        &self.verifiers
    }

    pub fn required_challenger_bond(&self, pid: ProcessId) -> Result<Amount> {
        let p = self.process(pid)?;
        let bond = p
            .solver
            .map(|(_, b)| b)
            .unwrap_or(p.spec.required_solver_bond);
        Ok(economics::challenger_bond_from_solver(
            bond,
            &self.params.policy,
        )?)
    }

    pub fn verifier_exposure(&self, agent: AgentId, depth: u32) -> Result<Amount> {
        let stake = self.verifiers.get(&agent).copied().unwrap_or(0);
        Ok(economics::verifier_exposure(
            stake,
            depth,
            &self.params.policy,
        )?)
    }

    fn process_mut(&mut self, pid: ProcessId) -> Result<&mut Process> {
        self.processes
            .get_mut(&pid)
            .ok_or(ProtocolError::UnknownProcess(pid))
    }

    fn record<P: Serialize>(&mut self, now: Tick, pid: Option<ProcessId>, op: &str, payload: &P) {
        if !self.log.is_enabled() {
            return;
        }
        let phase = pid
            .and_then(|p| self.processes.get(&p))
            .map(|p| p.state.phase.to_string());
        self.log
            .append(now, pid, RecordKind::Protocol, op, payload, phase);
    }

    fn record_entries(
        &mut self,
        pid: Option<ProcessId>,
        entries: impl IntoIterator<Item = LedgerEntry>,
    ) {
        for entry in entries {
            self.log.append(
                entry.tick,
                pid,
                RecordKind::Ledger,
                entry.kind.name(),
                &entry,
                None,
            );
        }
    }

    /// Mints tokens into an agent's free balance.
    pub fn deposit(&mut self, agent: AgentId, amount: Amount, now: Tick) -> Result<()> {
        let entry = self.ledger.deposit(agent, amount, now)?;
        self.record(now, None, "deposit", &AgentPayload { agent, amount });
        self.record_entries(None, [entry]);
        Ok(())
    }

    /// Adds (or restakes) a bonded verifier. The stake sizes the verifier's
    /// per-ruling exposure.
    pub fn register_verifier(&mut self, agent: AgentId, stake: Amount, now: Tick) -> Result<()> {
        self.verifiers.insert(agent, stake);
        self.record(
            now,
            None,
            "register_verifier",
            &AgentPayload {
                agent,
                amount: stake,
            },
        );
        Ok(())
    }

    pub fn publish_intent(&mut self, spec: TaskSpec, now: Tick) -> Result<ProcessId> {
        spec.validate().map_err(ProtocolError::InvalidSpec)?;
        if self.task_ids.contains(&spec.task_id) {
            return Err(ProtocolError::DuplicateTask(spec.task_id));
        }
        let pid = ProcessId(self.next_process);
        let mut entries = Vec::new();
        if spec.task_fee > 0 {
            let key = EscrowKey::new(pid, spec.originator, EscrowPurpose::TaskFee);
            entries.push(self.ledger.lock(key, spec.task_fee, now)?);
        }
        self.next_process += 1;
        self.task_ids.insert(spec.task_id.clone());
        let payload = PublishPayload {
            task_id: &spec.task_id,
            originator: spec.originator,
            task_fee: spec.task_fee,
            required_solver_bond: spec.required_solver_bond,
            data_hash: spec.data_hash,
            constraints: &spec.constraints,
        };
        let payload = serde_json::to_value(&payload).expect("payload serializes");
        self.processes.insert(
            pid,
            Process {
                id: pid,
                spec,
                state: ProcessState {
                    phase: Phase::IntentPublished,
                    current_depth: 0,
                    window_deadline: None,
                },
                candidates: Vec::new(),
                solver: None,
                result: None,
                levels: Vec::new(),
                escalation: None,
                settled: false,
            },
        );
        self.record(now, Some(pid), "publish_intent", &payload);
        self.record_entries(Some(pid), entries);
        Ok(pid)
    }

    /// Offers to solve. The bond is checked now and locked only on selection.
    pub fn register_commitment(
        &mut self,
        pid: ProcessId,
        agent: AgentId,
        bond: Amount,
        now: Tick,
    ) -> Result<usize> {
        let p = self.process(pid)?;
        expect_phase(p, "register_commitment", |ph| ph == Phase::IntentPublished)?;
        if bond < p.spec.required_solver_bond {
            return Err(ProtocolError::BondTooSmall {
                offered: bond,
                required: p.spec.required_solver_bond,
            });
        }
        if p.candidates.iter().any(|c| c.agent == agent) {
            return Err(ProtocolError::DuplicateCommitment(agent));
        }
        let available = self.ledger.free(agent);
        if available < bond {
            return Err(LedgerError::InsufficientBalance {
                agent,
                needed: bond,
                available,
            }
            .into());
        }
        let candidate = Candidate {
            agent,
            bond,
            registered_at: now,
        };
        let p = self.process_mut(pid)?;
        p.candidates.push(candidate.clone());
        let id = p.candidates.len() - 1;
        self.record(now, Some(pid), "register_commitment", &candidate);
        Ok(id)
    }

    /// Picks the solver among candidates that can still cover their bond and
    /// locks that bond.
    pub fn select_solver(&mut self, pid: ProcessId, seed: u64, now: Tick) -> Result<AgentId> {
        let p = self.process(pid)?;
        expect_phase(p, "select_solver", |ph| ph == Phase::IntentPublished)?;
        let qualified: Vec<&Candidate> = p
            .candidates
            .iter()
            .filter(|c| self.ledger.free(c.agent) >= c.bond)
            .collect();
        if qualified.is_empty() {
            return Err(ProtocolError::EmptyPool);
        }
        let chosen = match p.spec.constraints.solver_selection_policy {
            SelectionPolicy::FirstQualified => qualified[0],
            SelectionPolicy::UniformRandom => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                qualified[rand::Rng::random_range(&mut rng, 0..qualified.len())]
            }
        };
        let (agent, bond) = (chosen.agent, chosen.bond);
        let entry = self.ledger.lock(
            EscrowKey::new(pid, agent, EscrowPurpose::SolverBond),
            bond,
            now,
        )?;
        let p = self.process_mut(pid)?;
        p.solver = Some((agent, bond));
        p.state.phase = Phase::SolverSelected;
        self.record(
            now,
            Some(pid),
            "select_solver",
            &AgentPayload {
                agent,
                amount: bond,
            },
        );
        self.record_entries(Some(pid), [entry]);
        Ok(agent)
    }

    pub fn submit_result(
        &mut self,
        pid: ProcessId,
        mut result: ResultRecord,
        now: Tick,
    ) -> Result<ProcessState> {
        let p = self.process(pid)?;
        expect_phase(p, "submit_result", |ph| ph == Phase::SolverSelected)?;
        if p.solver() != Some(result.solver) {
            return Err(ProtocolError::NotTheSolver(result.solver));
        }
        if result.task_id != p.spec.task_id {
            return Err(ProtocolError::InvalidResult(
                "task id does not match".into(),
            ));
        }
        if !result.commitment_is_valid() {
            return Err(ProtocolError::InvalidResult(
                "commitment does not match output and evidence".into(),
            ));
        }
        result.submitted_at = now;
        let window = p.spec.constraints.challenge_window;
        let payload = serde_json::json!({
            "solver": result.solver,
            "commitment": result.commitment,
        });
        let p = self.process_mut(pid)?;
        p.result = Some(result);
        p.state = ProcessState {
            phase: Phase::ChallengeWindowOpen,
            current_depth: 0,
            window_deadline: Some(now + window),
        };
        let state = p.state;
        self.record(now, Some(pid), "submit_result", &payload);
        Ok(state)
    }

    /// Expires whatever deadline has passed: an unchallenged window
    /// finalizes, an expired reveal deadline issues the ruling. Idempotent.
    pub fn advance_time(&mut self, pid: ProcessId, now: Tick) -> Result<Option<Transition>> {
        let p = self.process(pid)?;
        let from = p.state.phase;
        match from {
            Phase::ChallengeWindowOpen | Phase::RulingWindowOpen { .. } => {
                if p.state.window_deadline.is_some_and(|d| now >= d) {
                    let outcome = chain::outcome_of(&p.verdicts());
                    let p = self.process_mut(pid)?;
                    p.state = ProcessState {
                        phase: Phase::Finalized(outcome),
                        current_depth: p.state.current_depth,
                        window_deadline: None,
                    };
                    let to = p.state.phase;
                    self.record(now, Some(pid), "advance_time", &Transition { from, to });
                    return Ok(Some(Transition { from, to }));
                }
                Ok(None)
            }
            Phase::UnderVerification { .. } => {
                let expired = p
                    .open_level()
                    .and_then(|l| l.adjudication.as_ref())
                    .is_some_and(|a| now >= a.reveal_deadline);
                if expired {
                    self.issue_ruling(pid, now)?;
                    let to = self.process(pid)?.state.phase;
                    return Ok(Some(Transition { from, to }));
                }
                Ok(None)
            }
            _ => Ok(None),
        }
    }

    /// Stakes against the result (depth 0) or the latest ruling.
    pub fn open_challenge(
        &mut self,
        pid: ProcessId,
        challenger: AgentId,
        evidence: Vec<u8>,
        bond: Amount,
        now: Tick,
    ) -> Result<DisputeRecord> {
        let p = self.process(pid)?;
        let phase = expect_phase(p, "open_challenge", |ph| {
            matches!(
                ph,
                Phase::ChallengeWindowOpen | Phase::RulingWindowOpen { .. }
            )
        })?;
        let deadline = p
            .state
            .window_deadline
            .expect("window phases carry a deadline");
        if now >= deadline {
            return Err(ProtocolError::WindowClosed { deadline, now });
        }
        let depth = p.state.current_depth;
        let max = p.spec.constraints.max_recursion_depth;
        if depth + 1 > max {
            return Err(ProtocolError::DepthExhausted { depth, max });
        }
        let (target, accountable): (DisputeTarget, Vec<AgentId>) = match phase {
            Phase::ChallengeWindowOpen => (DisputeTarget::Result, p.solver().into_iter().collect()),
            _ => {
                let prior = p
                    .levels
                    .last()
                    .and_then(|l| l.ruling.as_ref())
                    .expect("ruling window has a ruling");
                (
                    DisputeTarget::Ruling { depth: depth - 1 },
                    prior.quorum.clone(),
                )
            }
        };
        if accountable.contains(&challenger) {
            return Err(ProtocolError::SelfChallenge(challenger));
        }
        let required = self.required_challenger_bond(pid)?;
        if bond < required {
            return Err(ProtocolError::BondTooSmall {
                offered: bond,
                required,
            });
        }
        let key = EscrowKey::new(pid, challenger, EscrowPurpose::ChallengerBond(depth));
        let entry = self.ledger.lock(key, bond, now)?;
        let dispute = DisputeRecord {
            dispute_id: DisputeId {
                process: pid,
                depth,
            },
            depth,
            target,
            challenger,
            adversarial_evidence: evidence,
            challenger_bond: bond,
            opened_at: now,
        };
        let p = self.process_mut(pid)?;
        p.levels.push(Level {
            dispute: dispute.clone(),
            adjudication: None,
            ruling: None,
        });
        p.state = ProcessState {
            phase: Phase::UnderVerification { depth },
            current_depth: depth,
            window_deadline: None,
        };
        self.record(now, Some(pid), "open_challenge", &dispute);
        self.record_entries(Some(pid), [entry]);
        Ok(dispute)
    }

    /// Registered verifiers who may sit on the open dispute and can cover
    /// their exposure, in id order. A zero exposure bonds nothing, so it
    /// does not qualify.
    pub fn eligible_verifiers(&self, pid: ProcessId) -> Result<Vec<(AgentId, Amount)>> {
        let p = self.process(pid)?;
        let depth = match p.state.phase {
            Phase::UnderVerification { depth } => depth,
            _ => p.state.current_depth,
        };
        let conflicted = p.conflicted();
        let mut out = Vec::new();
        for (&agent, &stake) in &self.verifiers {
            if conflicted.contains(&agent) {
                continue;
            }
            let exposure = economics::verifier_exposure(stake, depth, &self.params.policy)?;
            if exposure > 0 && self.ledger.free(agent) >= exposure {
                out.push((agent, exposure));
            }
        }
        Ok(out)
    }

    /// Draws the quorum uniformly without replacement and locks each
    /// member's exposure.
    pub fn select_verifiers(
        &mut self,
        pid: ProcessId,
        seed: u64,
        now: Tick,
    ) -> Result<Vec<AgentId>> {
        let p = self.process(pid)?;
        let phase = expect_phase(p, "select_verifiers", |ph| {
            matches!(ph, Phase::UnderVerification { .. })
        })?;
        let Phase::UnderVerification { depth } = phase else {
            unreachable!()
        };
        if p.levels.last().is_some_and(|l| l.adjudication.is_some()) {
            return Err(ProtocolError::QuorumAlreadySelected);
        }
        let size = p.spec.constraints.quorum_size as usize;
        let eligible = self.eligible_verifiers(pid)?;
        if eligible.len() < size {
            return Err(ProtocolError::InsufficientVerifiers {
                eligible: eligible.len(),
                required: size,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<(AgentId, Amount)> =
            rand::seq::index::sample(&mut rng, eligible.len(), size)
                .into_iter()
                .map(|i| eligible[i])
                .collect();
        picked.sort();

        let mut entries = Vec::with_capacity(size);
        for (agent, exposure) in &picked {
            let key = EscrowKey::new(pid, *agent, EscrowPurpose::VerifierExposure(depth));
            entries.push(
                self.ledger
                    .lock(key, *exposure, now)
                    .expect("eligibility checked the balance"),
            );
        }
        let commit_deadline = now + self.params.commit_window;
        let reveal_deadline = commit_deadline + self.params.reveal_window;
        let adjudication = Adjudication {
            quorum: picked.iter().map(|(a, _)| *a).collect(),
            exposure: picked.iter().copied().collect(),
            commitments: BTreeMap::new(),
            reveals: BTreeMap::new(),
            commit_deadline,
            reveal_deadline,
        };
        let quorum = adjudication.quorum.clone();
        let payload = serde_json::json!({
            "depth": depth,
            "quorum": &quorum,
            "commit_deadline": commit_deadline,
            "reveal_deadline": reveal_deadline,
        });
        self.process_mut(pid)?
            .levels
            .last_mut()
            .expect("open level")
            .adjudication = Some(adjudication);
        self.record(now, Some(pid), "select_verifiers", &payload);
        self.record_entries(Some(pid), entries);
        Ok(quorum)
    }

    fn adjudication(&self, pid: ProcessId, op: &'static str) -> Result<&Adjudication> {
        let p = self.process(pid)?;
        expect_phase(p, op, |ph| matches!(ph, Phase::UnderVerification { .. }))?;
        p.levels
            .last()
            .and_then(|l| l.adjudication.as_ref())
            .ok_or(ProtocolError::QuorumNotSelected)
    }

    fn adjudication_mut(&mut self, pid: ProcessId) -> &mut Adjudication {
        self.processes
            .get_mut(&pid)
            .and_then(|p| p.levels.last_mut())
            .and_then(|l| l.adjudication.as_mut())
            .expect("checked by adjudication()")
    }

    pub fn commit_verdict(
        &mut self,
        pid: ProcessId,
        verifier: AgentId,
        commitment: Hash32,
        now: Tick,
    ) -> Result<()> {
        let a = self.adjudication(pid, "commit_verdict")?;
        if !a.quorum.contains(&verifier) {
            return Err(ProtocolError::NotInQuorum(verifier));
        }
        if a.commitments.contains_key(&verifier) {
            return Err(ProtocolError::DuplicateCommit(verifier));
        }
        if now >= a.commit_deadline {
            return Err(ProtocolError::DeadlinePassed {
                deadline: a.commit_deadline,
                now,
            });
        }
        self.adjudication_mut(pid)
            .commitments
            .insert(verifier, commitment);
        self.record(
            now,
            Some(pid),
            "commit_verdict",
            &CommitPayload {
                verifier,
                commitment,
            },
        );
        Ok(())
    }

    /// Opens a commitment. Reveals are accepted once every member has
    /// committed or the commit deadline has passed.
    pub fn reveal_verdict(
        &mut self,
        pid: ProcessId,
        verifier: AgentId,
        verdict: Verdict,
        salt: Vec<u8>,
        now: Tick,
    ) -> Result<()> {
        let a = self.adjudication(pid, "reveal_verdict")?;
        if !a.quorum.contains(&verifier) {
            return Err(ProtocolError::NotInQuorum(verifier));
        }
        let Some(commitment) = a.commitments.get(&verifier) else {
            return Err(ProtocolError::NoCommitment(verifier));
        };
        if a.reveals.contains_key(&verifier) {
            return Err(ProtocolError::DuplicateReveal(verifier));
        }
        if now >= a.reveal_deadline {
            return Err(ProtocolError::DeadlinePassed {
                deadline: a.reveal_deadline,
                now,
            });
        }
        if now < a.commit_deadline && a.commitments.len() < a.quorum.len() {
            return Err(ProtocolError::RevealNotOpen);
        }
        if verdict_commitment(verdict, &salt) != *commitment {
            return Err(ProtocolError::CommitMismatch(verifier));
        }
        let reveal = Reveal { verdict, salt };
        self.record(
            now,
            Some(pid),
            "reveal_verdict",
            &RevealPayload {
                verifier,
                reveal: &reveal,
            },
        );
        self.adjudication_mut(pid).reveals.insert(verifier, reveal);
        Ok(())
    }

    /// Tallies the reveals into a ruling and opens its challenge window.
    ///
    /// The verdict is the strict majority of valid reveals; a tie or a round
    /// with no valid reveal upholds the target. The latter is marked void.
    pub fn issue_ruling(&mut self, pid: ProcessId, now: Tick) -> Result<RulingRecord> {
        let a = self.adjudication(pid, "issue_ruling")?;
        let all_revealed = a.reveals.len() == a.quorum.len();
        if !all_revealed && now < a.reveal_deadline {
            return Err(ProtocolError::RulingNotReady {
                reveal_deadline: a.reveal_deadline,
                now,
            });
        }
        let overturn = a
            .reveals
            .values()
            .filter(|r| r.verdict == Verdict::OverturnTarget)
            .count();
        let uphold = a.reveals.len() - overturn;
        let verdict = if overturn > uphold {
            Verdict::OverturnTarget
        } else {
            Verdict::UpholdTarget
        };
        let p = self.process(pid)?;
        let Phase::UnderVerification { depth } = p.state.phase else {
            unreachable!()
        };
        let window = p.spec.constraints.ruling_challenge_window;
        let ruling = RulingRecord {
            dispute_id: DisputeId {
                process: pid,
                depth,
            },
            quorum: a.quorum.clone(),
            commitments: a.commitments.clone(),
            reveals: a.reveals.clone(),
            verdict,
            void: a.reveals.is_empty(),
            verifier_exposure: a.exposure.clone(),
            issued_at: now,
        };
        let p = self.process_mut(pid)?;
        p.levels.last_mut().expect("open level").ruling = Some(ruling.clone());
        p.state = ProcessState {
            phase: Phase::RulingWindowOpen { depth },
            current_depth: depth + 1,
            window_deadline: Some(now + window),
        };
        let payload = serde_json::json!({
            "depth": depth,
            "verdict": verdict,
            "void": ruling.void,
            "non_revealers": ruling.non_revealers().collect::<Vec<_>>(),
        });
        self.record(now, Some(pid), "issue_ruling", &payload);
        Ok(ruling)
    }

    /// Whether a failed challenge or quorum draw warrants escalation now.
    pub fn escalation_reason(&self, pid: ProcessId) -> Result<Option<EscalationReason>> {
        let p = self.process(pid)?;
        Ok(match p.state.phase {
            Phase::RulingWindowOpen { .. }
                if p.state.current_depth >= p.spec.constraints.max_recursion_depth =>
            {
                Some(EscalationReason::DepthExhausted)
            }
            Phase::UnderVerification { .. }
                if p.levels.last().is_some_and(|l| l.adjudication.is_none()) =>
            {
                let eligible = self.eligible_verifiers(pid)?.len();
                (eligible < p.spec.constraints.quorum_size as usize)
                    .then_some(EscalationReason::VerifierScarcity)
            }
            _ => None,
        })
    }

    /// Hands the process to the configured higher layer, freezing its
    /// escrows. Without a target the standing claim at the deepest surviving
    /// level finalizes, and an unadjudicated dispute is dropped.
    pub fn escalate(&mut self, pid: ProcessId, now: Tick) -> Result<ProcessState> {
        let p = self.process(pid)?;
        expect_phase(p, "escalate", |ph| {
            matches!(
                ph,
                Phase::RulingWindowOpen { .. } | Phase::UnderVerification { .. }
            )
        })?;
        let reason = self
            .escalation_reason(pid)?
            .ok_or(ProtocolError::EscalationNotWarranted)?;
        let p = self.process(pid)?;
        let standing = chain::outcome_of(&p.verdicts());
        let depth = p.state.current_depth;
        match p.spec.constraints.escalation_target.clone() {
            Some(target) => {
                let entry = self.ledger.freeze(pid, now);
                let record = EscalationRecord {
                    process: pid,
                    target,
                    depth,
                    reason,
                    frozen_escrows: self.ledger.escrows_of(pid).into_iter().collect(),
                    standing,
                    escalated_at: now,
                };
                let p = self.process_mut(pid)?;
                p.state = ProcessState {
                    phase: Phase::Escalated,
                    current_depth: depth,
                    window_deadline: None,
                };
                p.escalation = Some(record.clone());
                self.record(now, Some(pid), "escalate", &record);
                self.record_entries(Some(pid), [entry]);
            }
            None => {
                let p = self.process_mut(pid)?;
                p.state = ProcessState {
                    phase: Phase::Finalized(standing),
                    current_depth: depth,
                    window_deadline: None,
                };
                let payload =
                    serde_json::json!({ "reason": reason, "standing": standing, "target": null });
                self.record(now, Some(pid), "escalate", &payload);
            }
        }
        self.state(pid)
    }

    /// Outcome implied by the issued rulings, taking the deepest as standing.
    pub fn evaluate_chain(&self, pid: ProcessId) -> Result<Outcome> {
        let p = self.process(pid)?;
        expect_phase(p, "evaluate_chain", |ph| {
            !matches!(ph, Phase::IntentPublished | Phase::SolverSelected)
        })?;
        Ok(chain::outcome_of(&p.verdicts()))
    }

    pub fn plan_settlement(&self, pid: ProcessId) -> Result<SettlementPlan> {
        let p = self.process(pid)?;
        expect_phase(p, "plan_settlement", |ph| matches!(ph, Phase::Finalized(_)))?;
        Ok(chain::plan(p, &self.reward_share))
    }

    /// Plans and applies the settlement of a finalized process, once.
    pub fn settle(&mut self, pid: ProcessId, now: Tick) -> Result<SettlementPlan> {
        let plan = self.plan_settlement(pid)?;
        if self.process(pid)?.settled {
            return Err(ProtocolError::AlreadySettled(pid));
        }
        let entries = self.ledger.apply_settlement(&plan, now)?;
        self.process_mut(pid)?.settled = true;
        self.record(now, Some(pid), "settle", &plan);
        self.record_entries(Some(pid), entries);
        Ok(plan)
    }
}

fn expect_phase(p: &Process, op: &'static str, allowed: impl Fn(Phase) -> bool) -> Result<Phase> {
    let phase = p.state.phase;
    if allowed(phase) {
        Ok(phase)
    } else {
        Err(ProtocolError::WrongPhase { op, phase })
    }
}
