//! Discrete-event driver.
//!
//! Events are `(tick, sequence)`-ordered. Every random draw comes from one
//! ChaCha stream seeded by the config, taken in event order, so a run is a
//! pure function of its config.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use super::config::{ConfigError, ScenarioConfig};
use super::metrics::{InvestigationNote, RunMetrics, TaskNote};
use crate::agents::{
    self, AgentProfile, ChallengerAction, ChallengerStrategy, Role, SolverAction, Strategy,
    VerifierAction,
};
use crate::eventlog::{EventLog, RecordKind};
use crate::ledger::Ledger;
use crate::protocol::{
    verdict_commitment, Engine, EngineParams, Phase, ProcessState, ProtocolError, ResultRecord,
    TaskSpec, Verdict,
};
use crate::scalar::{self, Scalar};
use crate::{AgentId, Amount, ProcessId, Real, Tick};

/// Funds the task fees.
pub const ORIGINATOR: AgentId = AgentId(0);

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("tick {tick}: {source}")]
    Protocol { tick: Tick, source: ProtocolError },
    #[error("ledger conservation violated at tick {0}")]
    Conservation(Tick),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub log: EventLog,
    pub ledger: Ledger,
}

/// Closing snapshot appended as the last record of every run.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct FinalState {
    pub tick: Tick,
    pub balances: BTreeMap<AgentId, Amount>,
    pub escrowed: u128,
    pub burned: u128,
    pub deposited: u128,
    pub phases: BTreeMap<ProcessId, String>,
}

impl FinalState {
    pub fn of(tick: Tick, ledger: &Ledger, phases: BTreeMap<ProcessId, String>) -> Self {
        FinalState {
            tick,
            balances: ledger.balances().clone(),
            escrowed: ledger.total_escrowed(),
            burned: ledger.burned(),
            deposited: ledger.deposited(),
            phases,
        }
    }
}

pub fn run(config: &ScenarioConfig) -> Result<RunOutput, SimError> {
    run_observed(config, |_, _| {})
}

/// Like [`run`], calling `observe` with the ledger at the end of every tick
/// that saw activity.
pub fn run_observed(
    config: &ScenarioConfig,
    observe: impl FnMut(Tick, &Ledger),
) -> Result<RunOutput, SimError> {
    config.validate()?;
    let mut sim = Sim::new(config)?;
    sim.execute(observe)?;
    let log = sim.engine.log().clone();
    let metrics = RunMetrics::from_records(log.records());
    Ok(RunOutput {
        metrics,
        ledger: sim.engine.ledger().clone(),
        log,
    })
}

pub fn profiles(config: &ScenarioConfig) -> Vec<AgentProfile<Real>> {
    let mut out = Vec::new();
    for group in &config.agents {
        for _ in 0..group.count {
            let id = AgentId(out.len() as u32 + 1);
            out.push(AgentProfile {
                id,
                capabilities: group.roles.clone(),
                strategy: Strategy {
                    solver: group.solver,
                    challenger: group.challenger,
                    verifier: group.verifier,
                },
                subjective_error_prior: group.prior,
                detection_cost: group
                    .detection_cost
                    .unwrap_or(config.economics.falsification_cost),
                stake: group.stake,
                subsidy_budget: group.subsidy_budget,
                cheat_gain: group.cheat_gain,
            });
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Publish(u64),
    Step(ProcessId),
}

#[derive(Default)]
struct Track {
    incorrect: bool,
    /// `current_depth` whose challenge round already ran.
    round_done: Option<u32>,
    /// Verdicts and salts to reveal for the open level.
    pending: Vec<(AgentId, Verdict, Vec<u8>)>,
    revealed: bool,
}

struct Sim<'a> {
    config: &'a ScenarioConfig,
    engine: Engine<Real>,
    rng: ChaCha8Rng,
    agents: Vec<AgentProfile<Real>>,
    queue: BTreeMap<(Tick, u64), Event>,
    next_event: u64,
    tracks: BTreeMap<ProcessId, Track>,
    bond: Amount,
    now: Tick,
}

fn index(agent: AgentId) -> usize {
    agent.0 as usize - 1
}

impl<'a> Sim<'a> {
    fn new(config: &'a ScenarioConfig) -> Result<Self, SimError> {
        let params = EngineParams {
            policy: config.policy.bond_policy(),
            reward_share: config.beta,
            commit_window: config.policy.commit_window,
            reveal_window: config.policy.reveal_window,
        };
        let engine =
            Engine::new(params).map_err(|source| SimError::Protocol { tick: 0, source })?;
        let bond = config.solver_bond().map_err(|e| ConfigError::Invalid {
            field: "tasks.solver_bond".into(),
            reason: e.to_string(),
        })?;
        Ok(Sim {
            config,
            engine,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            agents: profiles(config),
            queue: BTreeMap::new(),
            next_event: 0,
            tracks: BTreeMap::new(),
            bond,
            now: 0,
        })
    }

    fn schedule(&mut self, tick: Tick, event: Event) {
        self.queue.insert((tick, self.next_event), event);
        self.next_event += 1;
    }

    fn note<P: Serialize>(&mut self, process: Option<ProcessId>, op: &str, payload: &P) {
        self.engine
            .log_mut()
            .append(self.now, process, RecordKind::Sim, op, payload, None);
    }

    fn fail(&self, source: ProtocolError) -> SimError {
        SimError::Protocol {
            tick: self.now,
            source,
        }
    }

    fn execute(&mut self, mut observe: impl FnMut(Tick, &Ledger)) -> Result<(), SimError> {
        let config = serde_json::json!({ "seed": self.config.seed, "scenario": self.config });
        self.note(None, "config", &config);
        self.setup()?;
        self.check(&mut observe)?;
        for i in 0..self.config.tasks.count {
            self.schedule(1 + i * self.config.tasks.interval, Event::Publish(i));
        }
        while let Some(((tick, _), event)) = self.queue.pop_first() {
            if tick > self.config.horizon {
                break;
            }
            if tick != self.now {
                self.check(&mut observe)?;
                self.now = tick;
            }
            match event {
                Event::Publish(i) => self.publish(i)?,
                Event::Step(pid) => self.step(pid)?,
            }
        }
        self.check(&mut observe)?;
        let phases = self
            .engine
            .processes()
            .map(|p| (p.id, p.state.phase.to_string()))
            .collect();
        let snapshot = FinalState::of(self.now, self.engine.ledger(), phases);
        self.note(None, "final", &snapshot);
        Ok(())
    }

    fn check(&self, observe: &mut impl FnMut(Tick, &Ledger)) -> Result<(), SimError> {
        let ledger = self.engine.ledger();
        if !ledger.conservation_holds() {
            return Err(SimError::Conservation(self.now));
        }
        observe(self.now, ledger);
        Ok(())
    }

    fn setup(&mut self) -> Result<(), SimError> {
        let fees = self
            .config
            .tasks
            .fee
            .saturating_mul(self.config.tasks.count);
        if fees > 0 {
            self.engine
                .deposit(ORIGINATOR, fees, 0)
                .map_err(|e| self.fail(e))?;
        }
        for i in 0..self.agents.len() {
            let a = self.agents[i].clone();
            let balance = self.balance_of(a.id);
            if balance > 0 {
                self.engine
                    .deposit(a.id, balance, 0)
                    .map_err(|e| self.fail(e))?;
            }
            if a.can(Role::Verifier) {
                self.engine
                    .register_verifier(a.id, a.stake, 0)
                    .map_err(|e| self.fail(e))?;
            }
        }
        Ok(())
    }

    fn balance_of(&self, agent: AgentId) -> Amount {
        let mut seen = 0u32;
        for g in &self.config.agents {
            seen += g.count;
            if agent.0 <= seen {
                return g.balance;
            }
        }
        0
    }

    fn publish(&mut self, i: u64) -> Result<(), SimError> {
        let now = self.now;
        let spec = TaskSpec::new(
            format!("task-{i}"),
            self.config.constraints(),
            "simulated task",
            i.to_be_bytes().to_vec(),
            ORIGINATOR,
            self.config.tasks.fee,
            self.bond,
        );
        let task_id = spec.task_id.clone();
        let pid = self
            .engine
            .publish_intent(spec, now)
            .map_err(|e| self.fail(e))?;
        for a in 0..self.agents.len() {
            let agent = self.agents[a].id;
            if self.agents[a].can(Role::Solver) && self.engine.ledger().free(agent) >= self.bond {
                self.engine
                    .register_commitment(pid, agent, self.bond, now)
                    .map_err(|e| self.fail(e))?;
            }
        }
        let seed = self.rng.random::<u64>();
        let solver = match self.engine.select_solver(pid, seed, now) {
            Ok(s) => s,
            Err(ProtocolError::EmptyPool) => return Ok(()),
            Err(e) => return Err(self.fail(e)),
        };
        let profile = &self.agents[index(solver)];
        let mut incorrect = agents::solver_decide(profile, self.bond, self.config.tasks.fee)
            == SolverAction::SubmitIncorrect;
        if !incorrect && self.config.tasks.honest_error_rate > 0.0 {
            incorrect = self.rng.random_bool(self.config.tasks.honest_error_rate);
        }
        self.note(
            Some(pid),
            "task",
            &TaskNote {
                task: i,
                solver,
                incorrect,
            },
        );
        let output = if incorrect {
            b"incorrect".to_vec()
        } else {
            b"correct".to_vec()
        };
        let result = ResultRecord::new(task_id, solver, output, i.to_be_bytes().to_vec(), now);
        self.engine
            .submit_result(pid, result, now)
            .map_err(|e| self.fail(e))?;
        self.tracks.insert(
            pid,
            Track {
                incorrect,
                ..Track::default()
            },
        );
        self.schedule(now, Event::Step(pid));
        Ok(())
    }

    fn state(&self, pid: ProcessId) -> ProcessState {
        self.engine.state(pid).expect("tracked process exists")
    }

    fn step(&mut self, pid: ProcessId) -> Result<(), SimError> {
        let now = self.now;
        let state = self.state(pid);
        match state.phase {
            Phase::ChallengeWindowOpen | Phase::RulingWindowOpen { .. } => {
                let deadline = state
                    .window_deadline
                    .expect("window phases carry a deadline");
                if now >= deadline {
                    self.engine
                        .advance_time(pid, now)
                        .map_err(|e| self.fail(e))?;
                    return self.settle_if_final(pid);
                }
                let track = self.tracks.get_mut(&pid).expect("tracked");
                if track.round_done != Some(state.current_depth) {
                    track.round_done = Some(state.current_depth);
                    self.challenge_round(pid)?;
                }
                match self.state(pid).phase {
                    Phase::UnderVerification { .. } => self.schedule(now, Event::Step(pid)),
                    Phase::ChallengeWindowOpen | Phase::RulingWindowOpen { .. } => {
                        self.schedule(deadline, Event::Step(pid))
                    }
                    _ => self.settle_if_final(pid)?,
                }
            }
            Phase::UnderVerification { depth } => {
                let adjudication = self
                    .engine
                    .process(pid)
                    .ok()
                    .and_then(|p| p.levels.last())
                    .and_then(|l| l.adjudication.clone());
                let Some(adjudication) = adjudication else {
                    return self.convene(pid, depth);
                };
                let track = self.tracks.get_mut(&pid).expect("tracked");
                if !track.revealed {
                    track.revealed = true;
                    let pending = std::mem::take(&mut track.pending);
                    for (agent, verdict, salt) in pending {
                        self.engine
                            .reveal_verdict(pid, agent, verdict, salt, now)
                            .map_err(|e| self.fail(e))?;
                    }
                    let p = self.engine.process(pid).expect("exists");
                    let all = p
                        .levels
                        .last()
                        .and_then(|l| l.adjudication.as_ref())
                        .is_some_and(|a| a.reveals.len() == a.quorum.len());
                    if all {
                        self.engine
                            .issue_ruling(pid, now)
                            .map_err(|e| self.fail(e))?;
                        self.schedule(now, Event::Step(pid));
                    } else {
                        self.schedule(adjudication.reveal_deadline.max(now), Event::Step(pid));
                    }
                } else {
                    self.engine
                        .advance_time(pid, now)
                        .map_err(|e| self.fail(e))?;
                    self.schedule(now.max(adjudication.reveal_deadline), Event::Step(pid));
                }
            }
            Phase::Finalized(_) => self.settle_if_final(pid)?,
            _ => {}
        }
        Ok(())
    }

    fn settle_if_final(&mut self, pid: ProcessId) -> Result<(), SimError> {
        let p = self.engine.process(pid).expect("exists");
        if matches!(p.state.phase, Phase::Finalized(_)) && !p.settled {
            self.engine
                .settle(pid, self.now)
                .map_err(|e| self.fail(e))?;
        }
        Ok(())
    }

    /// Whether the claim under challenge at `current_depth` is wrong.
    fn claim_is_wrong(&self, pid: ProcessId, depth: u32) -> bool {
        let p = self.engine.process(pid).expect("exists");
        let mut wrong = self.tracks[&pid].incorrect;
        for level in p.levels.iter().take(depth as usize) {
            let Some(ruling) = &level.ruling else { break };
            let truth = if wrong {
                Verdict::OverturnTarget
            } else {
                Verdict::UpholdTarget
            };
            wrong = ruling.verdict != truth;
        }
        wrong
    }

    fn checking_cost(&self, base: Amount, depth: u32) -> Amount {
        let growth = scalar::powi(&self.config.economics.cost_growth, depth);
        let exact = (growth * base as Real).to_exact().unwrap_or_default();
        scalar::round_to_amount(&exact).unwrap_or(Amount::MAX)
    }

    /// The first willing challenger pays to check the open claim and
    /// disputes it if it finds an error.
    fn challenge_round(&mut self, pid: ProcessId) -> Result<(), SimError> {
        let now = self.now;
        let depth = self.state(pid).current_depth;
        let wrong = self.claim_is_wrong(pid, depth);
        let required = self
            .engine
            .required_challenger_bond(pid)
            .map_err(|e| self.fail(e))?;
        let p = self.engine.process(pid).expect("exists");
        let solver = p.solver();
        let (basis, accountable): (Amount, Vec<AgentId>) =
            match p.levels.last().and_then(|l| l.ruling.as_ref()) {
                Some(ruling) if depth > 0 => {
                    let against = ruling.verdict.negate();
                    let basis = ruling
                        .quorum
                        .iter()
                        .filter(|v| ruling.reveals.get(v).is_none_or(|r| r.verdict != against))
                        .map(|v| ruling.verifier_exposure[v])
                        .sum();
                    (basis, ruling.quorum.clone())
                }
                _ => (self.bond, Vec::new()),
            };
        for a in 0..self.agents.len() {
            let profile = &self.agents[a];
            let agent = profile.id;
            if !profile.can(Role::Challenger)
                || Some(agent) == solver
                || accountable.contains(&agent)
            {
                continue;
            }
            if self.engine.ledger().free(agent) < required {
                continue;
            }
            if self.config.tasks.visibility < 1.0
                && !self.rng.random_bool(self.config.tasks.visibility)
            {
                continue;
            }
            let profile = &self.agents[a];
            let cost = self.checking_cost(profile.detection_cost, depth);
            if agents::challenger_decide(profile, basis, required, cost, &self.config.beta)
                == ChallengerAction::Pass
            {
                continue;
            }
            if profile.strategy.challenger == ChallengerStrategy::Subsidized {
                let budget = &mut self.agents[a].subsidy_budget;
                *budget = budget.saturating_sub(cost);
            }
            self.note(
                Some(pid),
                "investigate",
                &InvestigationNote {
                    agent,
                    depth,
                    cost,
                    found_error: wrong,
                },
            );
            if wrong {
                match self.engine.open_challenge(
                    pid,
                    agent,
                    b"counterexample".to_vec(),
                    required,
                    now,
                ) {
                    Ok(_) => {}
                    Err(ProtocolError::DepthExhausted { .. }) => {
                        self.engine.escalate(pid, now).map_err(|e| self.fail(e))?;
                    }
                    Err(e) => return Err(self.fail(e)),
                }
            }
            break;
        }
        Ok(())
    }

    /// Draws the quorum for the open dispute and collects commitments.
    fn convene(&mut self, pid: ProcessId, depth: u32) -> Result<(), SimError> {
        let now = self.now;
        let seed = self.rng.random::<u64>();
        let quorum = match self.engine.select_verifiers(pid, seed, now) {
            Ok(q) => q,
            Err(ProtocolError::InsufficientVerifiers { .. }) => {
                self.engine.escalate(pid, now).map_err(|e| self.fail(e))?;
                return self.settle_if_final(pid);
            }
            Err(e) => return Err(self.fail(e)),
        };
        let truth = if self.claim_is_wrong(pid, depth) {
            Verdict::OverturnTarget
        } else {
            Verdict::UpholdTarget
        };
        let next_cost = self.checking_cost(self.config.economics.falsification_cost, depth + 1);
        let exposures = self
            .engine
            .process(pid)
            .expect("exists")
            .levels
            .last()
            .and_then(|l| l.adjudication.clone());
        let exposures = exposures.expect("quorum selected").exposure;
        let mut pending = Vec::new();
        for agent in quorum {
            let draw = self.rng.random::<f64>();
            let salt = self.rng.random::<u64>().to_be_bytes().to_vec();
            let action = agents::verifier_decide(
                &self.agents[index(agent)],
                truth,
                exposures[&agent],
                next_cost,
                &self.config.economics.error_probability,
                draw,
            );
            let verdict = match action {
                VerifierAction::Reveal(v) => v,
                VerifierAction::Abstain => truth,
            };
            self.engine
                .commit_verdict(pid, agent, verdict_commitment(verdict, &salt), now)
                .map_err(|e| self.fail(e))?;
            if action != VerifierAction::Abstain {
                pending.push((agent, verdict, salt));
            }
        }
        let track = self.tracks.get_mut(&pid).expect("tracked");
        track.pending = pending;
        track.revealed = false;
        self.schedule(now + 1, Event::Step(pid));
        Ok(())
    }
}
