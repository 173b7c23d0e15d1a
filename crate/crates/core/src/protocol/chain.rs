//! Standing propagation over the dispute chain and the settlement it implies.
//!
//! Level `t` is the dispute opened at depth `t` and the ruling issued on it.
//! The deepest issued ruling survived its window, so it stands. A ruling that
//! stands fixes its target's standing to its verdict; a ruling that was
//! overturned fixes the opposite. The target of level `t > 0` is the ruling of
//! level `t - 1`, and the target of level 0 is the result.

use num_rational::BigRational;
use num_traits::One;

use super::engine::Process;
use super::types::{Outcome, RulingRecord, Verdict};
use crate::ledger::{
    EscrowKey, EscrowPurpose, PlannedBurn, PlannedRefund, PlannedTransfer, SettlementPlan,
    SettlementReason,
};
use crate::scalar::{exact_amount, round_to_amount};
use crate::{AgentId, Amount};

/// Per-level standings derived from the issued verdicts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Standings {
    /// Whether the target of level `t` (result or prior ruling) stands.
    pub target_stands: Vec<bool>,
    /// Whether the ruling of level `t` stands.
    pub ruling_stands: Vec<bool>,
}

pub fn standings(verdicts: &[Verdict]) -> Standings {
    let k = verdicts.len();
    let mut target_stands = vec![true; k];
    let mut ruling_stands = vec![true; k];
    for t in (0..k).rev() {
        let upheld = verdicts[t] == Verdict::UpholdTarget;
        target_stands[t] = ruling_stands[t] == upheld;
        if t > 0 {
            ruling_stands[t - 1] = target_stands[t];
        }
    }
    Standings {
        target_stands,
        ruling_stands,
    }
}

pub fn outcome_of(verdicts: &[Verdict]) -> Outcome {
    match standings(verdicts).target_stands.first() {
        Some(false) => Outcome::ResultOverturned,
        _ => Outcome::ResultStands,
    }
}

struct Planner {
    plan: SettlementPlan,
    burn_share: BigRational,
}

impl Planner {
    fn refund(&mut self, escrow: EscrowKey, amount: Amount) {
        if amount > 0 {
            self.plan.refunds.push(PlannedRefund { escrow, amount });
        }
    }

    /// Burns `round(burn_share * amount)` and splits the remainder evenly
    /// among `recipients`, handing leftover units to the first ones. With no
    /// recipient the whole amount is burned.
    fn slash(
        &mut self,
        from: EscrowKey,
        amount: Amount,
        recipients: &[AgentId],
        reason: SettlementReason,
    ) {
        if amount == 0 {
            return;
        }
        let burned = if recipients.is_empty() {
            amount
        } else {
            round_to_amount(&(self.burn_share.clone() * exact_amount(amount)))
                .expect("share of amount")
        };
        let reward = amount - burned;
        if !recipients.is_empty() {
            let n = recipients.len() as Amount;
            let (each, extra) = (reward / n, reward % n);
            for (i, to) in recipients.iter().enumerate() {
                let amount = each + u64::from((i as Amount) < extra);
                if amount > 0 {
                    self.plan.transfers.push(PlannedTransfer {
                        from,
                        to: *to,
                        amount,
                        reason,
                    });
                }
            }
        }
        if burned > 0 {
            self.plan.burns.push(PlannedBurn {
                from,
                amount: burned,
                reason,
            });
        }
    }
}

fn voted_correctly(ruling: &RulingRecord, voter: AgentId, target_stands: bool) -> bool {
    ruling
        .reveals
        .get(&voter)
        .is_some_and(|r| (r.verdict == Verdict::UpholdTarget) == target_stands)
}

/// Builds the settlement of a finalized process.
///
/// - The solver keeps its bond and earns the fee iff the result stands;
///   otherwise it is slashed to the depth-0 challenger.
/// - A challenger is refunded iff its target falls; otherwise it is slashed
///   to the level's defenders (the solver at depth 0, the correct voters of
///   the challenged ruling above that).
/// - A verifier is refunded iff it revealed a vote matching its target's
///   final standing. Other quorum members, non-revealers included, are
///   slashed to the challenger that overturned their ruling, or, if the
///   ruling stands, to the prevailing side of their level.
/// - A dispute abandoned without adjudication refunds its challenger.
///
/// Slashed amounts burn `1 - reward_share` and pay the rest to recipients.
pub(crate) fn plan(process: &Process, reward_share: &BigRational) -> SettlementPlan {
    let pid = process.id;
    let mut p = Planner {
        plan: SettlementPlan::default(),
        burn_share: BigRational::one() - reward_share,
    };

    let ruled: Vec<(&super::types::DisputeRecord, &RulingRecord)> = process
        .levels
        .iter()
        .filter_map(|l| l.ruling.as_ref().map(|r| (&l.dispute, r)))
        .collect();
    let verdicts: Vec<Verdict> = ruled.iter().map(|(_, r)| r.verdict).collect();
    let st = standings(&verdicts);
    let result_stands = st.target_stands.first().copied().unwrap_or(true);

    let correct_voters = |t: usize| -> Vec<AgentId> {
        let ruling = ruled[t].1;
        ruling
            .quorum
            .iter()
            .copied()
            .filter(|v| voted_correctly(ruling, *v, st.target_stands[t]))
            .collect()
    };
    let (solver, solver_bond) = process.solver.expect("finalized processes have a solver");
    let defenders = |t: usize| -> Vec<AgentId> {
        if t == 0 {
            vec![solver]
        } else {
            correct_voters(t - 1)
        }
    };
    let prevailing = |t: usize| -> Vec<AgentId> {
        if st.target_stands[t] {
            defenders(t)
        } else {
            vec![ruled[t].0.challenger]
        }
    };

    let solver_key = EscrowKey::new(pid, solver, EscrowPurpose::SolverBond);
    let fee_key = EscrowKey::new(pid, process.spec.originator, EscrowPurpose::TaskFee);
    let fee = process.spec.task_fee;
    if result_stands {
        p.refund(solver_key, solver_bond);
        if fee > 0 {
            p.plan.transfers.push(PlannedTransfer {
                from: fee_key,
                to: solver,
                amount: fee,
                reason: SettlementReason::TaskFee,
            });
        }
    } else {
        p.slash(
            solver_key,
            solver_bond,
            &[ruled[0].0.challenger],
            SettlementReason::SolverSlashed,
        );
        p.refund(fee_key, fee);
    }

    for (t, (dispute, ruling)) in ruled.iter().enumerate() {
        let key = EscrowKey::new(
            pid,
            dispute.challenger,
            EscrowPurpose::ChallengerBond(dispute.depth),
        );
        if st.target_stands[t] {
            p.slash(
                key,
                dispute.challenger_bond,
                &defenders(t),
                SettlementReason::ChallengerSlashed,
            );
        } else {
            p.refund(key, dispute.challenger_bond);
        }

        let recipients = if st.ruling_stands[t] {
            prevailing(t)
        } else {
            vec![ruled[t + 1].0.challenger]
        };
        for member in &ruling.quorum {
            let key = EscrowKey::new(pid, *member, EscrowPurpose::VerifierExposure(dispute.depth));
            let exposure = ruling.verifier_exposure[member];
            if voted_correctly(ruling, *member, st.target_stands[t]) {
                p.refund(key, exposure);
            } else {
                p.slash(
                    key,
                    exposure,
                    &recipients,
                    SettlementReason::VerifierSlashed,
                );
            }
        }
    }

    for level in process.levels.iter().filter(|l| l.ruling.is_none()) {
        let d = &level.dispute;
        p.refund(
            EscrowKey::new(pid, d.challenger, EscrowPurpose::ChallengerBond(d.depth)),
            d.challenger_bond,
        );
    }
    p.plan
}
