//! Solver, challenger and verifier strategies and the unilateral deviation
//! test.
//!
//! Decisions are pure functions of the profile and the supplied parameters.
//! Every strict comparison is decided in exact arithmetic; ties resolve to
//! the honest or passive action.

use std::collections::BTreeSet;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::economics::{self, EconomicsError, Falsification};
use crate::protocol::Verdict;
use crate::scalar::{exact_amount, Scalar};
use crate::{AgentId, Amount};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Solver,
    Challenger,
    Verifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStrategy {
    #[default]
    Rational,
    AlwaysHonest,
    AlwaysCheat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChallengerStrategy {
    #[default]
    Rational,
    /// Investigates whenever the budget covers the cost, regardless of
    /// expected profit.
    Subsidized,
    Passive,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierStrategy<S> {
    #[default]
    Rational,
    AlwaysCorrect,
    /// Votes against the truth.
    Corrupt,
    /// Skips the reveal with the given probability.
    Lazy(S),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Strategy<S> {
    #[serde(default)]
    pub solver: SolverStrategy,
    #[serde(default)]
    pub challenger: ChallengerStrategy,
    #[serde(default)]
    pub verifier: VerifierStrategy<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentProfile<S> {
    pub id: AgentId,
    pub capabilities: BTreeSet<Role>,
    pub strategy: Strategy<S>,
    pub subjective_error_prior: S,
    pub detection_cost: Amount,
    pub stake: Amount,
    pub subsidy_budget: Amount,
    pub cheat_gain: Amount,
}

impl<S: Scalar> AgentProfile<S> {
    pub fn new(id: AgentId, capabilities: impl IntoIterator<Item = Role>, prior: S) -> Self {
        AgentProfile {
            id,
            capabilities: capabilities.into_iter().collect(),
            strategy: Strategy {
                solver: SolverStrategy::Rational,
                challenger: ChallengerStrategy::Rational,
                verifier: VerifierStrategy::Rational,
            },
            subjective_error_prior: prior,
            detection_cost: 0,
            stake: 0,
            subsidy_budget: 0,
            cheat_gain: 0,
        }
    }

    pub fn can(&self, role: Role) -> bool {
        self.capabilities.contains(&role)
    }

    pub fn validate(&self) -> Result<(), EconomicsError> {
        prior(&self.subjective_error_prior)?;
        if let VerifierStrategy::Lazy(p) = &self.strategy.verifier {
            prior(p)?;
        }
        Ok(())
    }

    fn prior(&self) -> BigRational {
        // Profiles that fail validation behave as if certain nothing is wrong.
        prior(&self.subjective_error_prior).unwrap_or_default()
    }
}

fn prior<S: Scalar>(p: &S) -> Result<BigRational, EconomicsError> {
    match p.to_exact() {
        Some(x) if crate::scalar::is_unit_interval(&x) => Ok(x),
        Some(_) => Err(EconomicsError::ProbabilityOutOfRange {
            name: "probability",
            value: p.to_f64(),
        }),
        None => Err(EconomicsError::NonFinite {
            name: "probability",
            value: p.to_f64(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverAction {
    SubmitCorrect,
    SubmitIncorrect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChallengerAction {
    Challenge,
    Pass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierAction {
    Reveal(Verdict),
    Abstain,
}

/// A rational solver cheats iff `cheat_gain > P_e * B_S`. The fee is paid
/// either way and does not enter the comparison.
pub fn solver_decide<S: Scalar>(
    profile: &AgentProfile<S>,
    solver_bond: Amount,
    _fee: Amount,
) -> SolverAction {
    match profile.strategy.solver {
        SolverStrategy::AlwaysHonest => SolverAction::SubmitCorrect,
        SolverStrategy::AlwaysCheat => SolverAction::SubmitIncorrect,
        SolverStrategy::Rational => {
            let loss = profile.prior() * exact_amount(solver_bond);
            if exact_amount(profile.cheat_gain) > loss {
                SolverAction::SubmitIncorrect
            } else {
                SolverAction::SubmitCorrect
            }
        }
    }
}

/// A rational challenger investigates iff its expected value is strictly
/// positive; a subsidized one iff its budget covers `F + B_C`.
pub fn challenger_decide<S: Scalar>(
    profile: &AgentProfile<S>,
    solver_bond: Amount,
    challenger_bond: Amount,
    falsification_cost: Amount,
    reward_share: &S,
) -> ChallengerAction {
    let go = match profile.strategy.challenger {
        ChallengerStrategy::Passive => false,
        ChallengerStrategy::Subsidized => {
            profile.subsidy_budget as u128 >= falsification_cost as u128 + challenger_bond as u128
        }
        ChallengerStrategy::Rational => economics::challenger_ev_exact(
            &S::from_exact(&profile.prior()),
            solver_bond,
            falsification_cost,
            challenger_bond,
            reward_share,
        )
        .is_ok_and(|ev| ev > BigRational::default()),
    };
    if go {
        ChallengerAction::Challenge
    } else {
        ChallengerAction::Pass
    }
}

/// `lazy_draw` is a uniform sample in `[0, 1)`, consumed only by the lazy
/// strategy: it abstains iff the draw falls below its non-reveal probability.
pub fn verifier_decide<S: Scalar>(
    profile: &AgentProfile<S>,
    truth: Verdict,
    verifier_bond: Amount,
    next_falsification_cost: Amount,
    next_error_probability: &S,
    lazy_draw: f64,
) -> VerifierAction {
    match &profile.strategy.verifier {
        VerifierStrategy::AlwaysCorrect => VerifierAction::Reveal(truth),
        VerifierStrategy::Corrupt => VerifierAction::Reveal(truth.negate()),
        VerifierStrategy::Lazy(p) => {
            if lazy_draw < p.to_f64() {
                VerifierAction::Abstain
            } else {
                VerifierAction::Reveal(truth)
            }
        }
        VerifierStrategy::Rational => {
            let holds = economics::verifier_condition_holds(
                verifier_bond,
                next_falsification_cost,
                next_error_probability,
            );
            if matches!(holds, Ok(Falsification::Holds)) {
                VerifierAction::Reveal(truth)
            } else {
                VerifierAction::Reveal(Verdict::UpholdTarget)
            }
        }
    }
}

/// Parameters of a single-claim game in which every other party plays its
/// rational strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationScenario<S> {
    pub solver_bond: Amount,
    pub falsification_cost: Amount,
    pub error_probability: S,
    pub cheat_gain: Amount,
    pub fee: Amount,
    pub challenger_bond: Amount,
    pub reward_share: S,
    /// Exposure of the verifier under test.
    pub verifier_bond: Amount,
}

impl<S: Scalar> DeviationScenario<S> {
    pub fn new(
        solver_bond: Amount,
        falsification_cost: Amount,
        error_probability: S,
        cheat_gain: Amount,
    ) -> Self {
        DeviationScenario {
            solver_bond,
            falsification_cost,
            error_probability,
            cheat_gain,
            fee: 0,
            challenger_bond: 0,
            reward_share: S::one(),
            verifier_bond: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport<S> {
    pub role: Role,
    pub honest: S,
    pub deviating: S,
    /// `honest >= deviating`, decided exactly.
    pub equilibrium: bool,
}

/// Expected payoff of the role's honest action against its best unilateral
/// deviation.
///
/// - Solver: honest earns the fee. Cheating earns `g`, less `P_e * B_S` when
///   a rational challenger would challenge.
/// - Challenger: with no error possible, passing earns 0 and challenging
///   loses `F + B_C`. Otherwise challenging earns the challenger EV and
///   passing earns 0.
/// - Verifier: ruling correctly earns 0. A bribed wrong ruling earns `g`,
///   less `P_e * B_V` when a rational challenger would contest it.
pub fn deviation_test<S: Scalar>(
    role: Role,
    s: &DeviationScenario<S>,
) -> Result<DeviationReport<S>, EconomicsError> {
    let p = &s.error_probability;
    let exact_p = prior(p)?;
    let contested = |bond: Amount| -> Result<bool, EconomicsError> {
        let ev = economics::challenger_ev_exact(
            p,
            bond,
            s.falsification_cost,
            s.challenger_bond,
            &s.reward_share,
        )?;
        Ok(ev > BigRational::default())
    };
    let a = |x: Amount| S::from_amount(x);
    let ex = exact_amount;
    let (honest, deviating, exact_honest, exact_deviating) = match role {
        Role::Solver | Role::Verifier => {
            let (bond, base) = if role == Role::Solver {
                (s.solver_bond, s.fee)
            } else {
                (s.verifier_bond, 0)
            };
            let (dev, exact_dev) = if contested(bond)? {
                (
                    a(s.cheat_gain) - economics::expected_loss_incorrect(p, bond),
                    ex(s.cheat_gain) - exact_p.clone() * ex(bond),
                )
            } else {
                (a(s.cheat_gain), ex(s.cheat_gain))
            };
            (a(base), dev, ex(base), exact_dev)
        }
        Role::Challenger => {
            if exact_p == BigRational::default() {
                let loss = s.falsification_cost + s.challenger_bond;
                (
                    S::zero(),
                    S::zero() - a(loss),
                    BigRational::default(),
                    -ex(loss),
                )
            } else {
                let ev = economics::challenger_ev(
                    p,
                    s.solver_bond,
                    s.falsification_cost,
                    s.challenger_bond,
                    &s.reward_share,
                );
                let exact_ev = economics::challenger_ev_exact(
                    p,
                    s.solver_bond,
                    s.falsification_cost,
                    s.challenger_bond,
                    &s.reward_share,
                )?;
                (ev, S::zero(), exact_ev, BigRational::default())
            }
        }
    };
    Ok(DeviationReport {
        role,
        honest,
        deviating,
        equilibrium: exact_honest >= exact_deviating,
    })
}
