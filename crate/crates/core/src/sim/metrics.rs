//! Run metrics, derived from an event log alone.

use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};

use crate::eventlog::{EventRecord, RecordKind};
use crate::ledger::{EntryKind, EscrowPurpose, LedgerEntry, SettlementPlan};
use crate::protocol::chain;
use crate::protocol::{Outcome, Phase, Verdict};
use crate::{AgentId, Amount, ProcessId};

/// Per-run summary. Field order is the CSV column order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub tasks: u64,
    /// Tasks whose submitted result was wrong.
    pub incorrect_submitted: u64,
    pub finalized: u64,
    pub correct_stood: u64,
    /// Incorrect results finalized as correct.
    pub incorrect_stood: u64,
    pub overturned: u64,
    pub correct_overturned: u64,
    /// `incorrect_stood / finalized`.
    pub incorrect_finalized_rate: f64,
    /// `correct_overturned / finalized`.
    pub correct_overturned_rate: f64,
    pub escalations: u64,
    /// Published but neither finalized nor escalated by the horizon.
    pub unresolved: u64,
    /// Claims a challenger paid to check.
    pub investigations: u64,
    pub challenges_issued: u64,
    pub challenges_won: u64,
    /// Mean slashed solver bond over settled incorrect submissions.
    pub mean_solver_loss_on_cheats: f64,
    /// Mean challenger payoff per investigation, checking costs included.
    pub mean_challenger_profit: f64,
    pub max_depth: u32,
    pub total_burned: u64,
    pub solver_payoff: i64,
    pub challenger_payoff: i64,
    pub verifier_payoff: i64,
    pub originator_payoff: i64,
}

/// Ground truth the simulator attaches to each task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskNote {
    pub task: u64,
    pub solver: AgentId,
    pub incorrect: bool,
}

/// A challenger paying to check a claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvestigationNote {
    pub agent: AgentId,
    pub depth: u32,
    pub cost: Amount,
    pub found_error: bool,
}

#[derive(Default)]
struct ProcessView {
    incorrect: Option<bool>,
    phase: Option<Phase>,
    verdicts: Vec<Verdict>,
    challenges: u32,
    plan: Option<SettlementPlan>,
}

#[derive(Deserialize)]
struct RulingPayload {
    verdict: Verdict,
}

impl RunMetrics {
    pub fn from_records(records: &[EventRecord]) -> Self {
        let mut m = RunMetrics::default();
        let mut processes: BTreeMap<ProcessId, ProcessView> = BTreeMap::new();
        let mut investigation_costs: i64 = 0;

        for r in records {
            let view = r.process.map(|p| processes.entry(p).or_default());
            match (r.kind, r.op.as_str()) {
                (RecordKind::Sim, "task") => {
                    if let (Some(v), Ok(note)) = (view, r.payload_as::<TaskNote>()) {
                        v.incorrect = Some(note.incorrect);
                    }
                }
                (RecordKind::Sim, "investigate") => {
                    if let Ok(note) = r.payload_as::<InvestigationNote>() {
                        m.investigations += 1;
                        investigation_costs += note.cost as i64;
                    }
                }
                (RecordKind::Ledger, _) => {
                    if let Ok(entry) = r.payload_as::<LedgerEntry>() {
                        m.total_burned += match entry.kind {
                            EntryKind::Burn { amount, .. } => amount,
                            EntryKind::Slash { burned, .. } => burned,
                            _ => 0,
                        };
                    }
                }
                (RecordKind::Protocol, op) => {
                    let Some(v) = view else { continue };
                    if let Some(phase) = r.phase.as_deref().and_then(Phase::parse) {
                        v.phase = Some(phase);
                    }
                    match op {
                        "open_challenge" => v.challenges += 1,
                        "issue_ruling" => {
                            if let Ok(p) = r.payload_as::<RulingPayload>() {
                                v.verdicts.push(p.verdict);
                            }
                        }
                        "settle" => v.plan = r.payload_as::<SettlementPlan>().ok(),
                        _ => {}
                    }
                }
                _ => {}
            }
        }

        let mut payoff: BTreeMap<&'static str, i64> = BTreeMap::new();
        let mut cheat_losses: (u64, u64) = (0, 0);
        for v in processes.values() {
            let Some(incorrect) = v.incorrect else {
                continue;
            };
            m.tasks += 1;
            m.incorrect_submitted += u64::from(incorrect);
            m.challenges_issued += u64::from(v.challenges);
            m.max_depth = m.max_depth.max(v.challenges);
            match v.phase {
                Some(Phase::Finalized(outcome)) => {
                    m.finalized += 1;
                    match (outcome, incorrect) {
                        (Outcome::ResultStands, false) => m.correct_stood += 1,
                        (Outcome::ResultStands, true) => m.incorrect_stood += 1,
                        (Outcome::ResultOverturned, correct) => {
                            m.overturned += 1;
                            m.correct_overturned += u64::from(!correct);
                        }
                    }
                    let st = chain::standings(&v.verdicts);
                    m.challenges_won += st.target_stands.iter().filter(|s| !**s).count() as u64;
                }
                Some(Phase::Escalated) => m.escalations += 1,
                _ => m.unresolved += 1,
            }
            let Some(plan) = &v.plan else { continue };
            let mut roles: BTreeMap<AgentId, &'static str> = BTreeMap::new();
            let mut solver_drawn = 0;
            for (key, amount) in plan.draws() {
                roles.insert(key.agent, role_name(key.purpose));
                if key.purpose == EscrowPurpose::SolverBond {
                    solver_drawn += amount;
                }
            }
            if incorrect {
                let refunded: Amount = plan
                    .refunds
                    .iter()
                    .filter(|r| r.escrow.purpose == EscrowPurpose::SolverBond)
                    .map(|r| r.amount)
                    .sum();
                cheat_losses.0 += solver_drawn - refunded;
                cheat_losses.1 += 1;
            }
            for (agent, delta) in plan.net_changes() {
                let role = roles.get(&agent).copied().unwrap_or("originator");
                *payoff.entry(role).or_default() += delta as i64;
            }
        }

        m.incorrect_finalized_rate = ratio(m.incorrect_stood, m.finalized);
        m.correct_overturned_rate = ratio(m.correct_overturned, m.finalized);
        m.mean_solver_loss_on_cheats = ratio(cheat_losses.0, cheat_losses.1);
        m.solver_payoff = payoff.get("solver").copied().unwrap_or(0);
        m.challenger_payoff = payoff.get("challenger").copied().unwrap_or(0) - investigation_costs;
        m.verifier_payoff = payoff.get("verifier").copied().unwrap_or(0);
        m.originator_payoff = payoff.get("originator").copied().unwrap_or(0);
        m.mean_challenger_profit = if m.investigations == 0 {
            0.0
        } else {
            m.challenger_payoff as f64 / m.investigations as f64
        };
        m
    }
}

fn role_name(purpose: EscrowPurpose) -> &'static str {
    match purpose {
        EscrowPurpose::SolverBond => "solver",
        EscrowPurpose::ChallengerBond(_) => "challenger",
        EscrowPurpose::VerifierExposure(_) => "verifier",
        EscrowPurpose::TaskFee => "originator",
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Writes rows as CSV with a header taken from the field names.
pub fn write_csv<W: io::Write, T: Serialize>(out: W, rows: &[T]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> csv::Result<Vec<RunMetrics>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

impl RunMetrics {
    /// Human-readable summary used by the `report` command.
    pub fn summary(&self) -> String {
        let pct = |x: f64| format!("{:.2}%", 100.0 * x);
        [
            format!("tasks                  {}", self.tasks),
            format!("incorrect submitted    {}", self.incorrect_submitted),
            format!("finalized              {}", self.finalized),
            format!("  correct stood        {}", self.correct_stood),
            format!(
                "  incorrect stood      {} ({})",
                self.incorrect_stood,
                pct(self.incorrect_finalized_rate)
            ),
            format!("  overturned           {}", self.overturned),
            format!(
                "  correct overturned   {} ({})",
                self.correct_overturned,
                pct(self.correct_overturned_rate)
            ),
            format!("escalated              {}", self.escalations),
            format!("unresolved             {}", self.unresolved),
            format!("investigations         {}", self.investigations),
            format!(
                "challenges won/issued  {}/{}",
                self.challenges_won, self.challenges_issued
            ),
            format!("max depth              {}", self.max_depth),
            format!(
                "mean solver loss/cheat {:.4}",
                self.mean_solver_loss_on_cheats
            ),
            format!("mean challenger profit {:.4}", self.mean_challenger_profit),
            format!("burned                 {}", self.total_burned),
            format!(
                "payoffs                solver {} challenger {} verifier {} originator {}",
                self.solver_payoff,
                self.challenger_payoff,
                self.verifier_payoff,
                self.originator_payoff
            ),
        ]
        .join("\n")
    }
}
