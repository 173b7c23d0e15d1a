//! Closed-form economic calculus of the verification game.
//!
//! Real-valued expectations are returned in the caller's scalar type. The
//! decisive inequalities (falsification, verifier condition, recursive
//! viability, positivity of a challenger's expected value) are evaluated in
//! exact rational arithmetic.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{self, exact_amount, exact_pow, Scalar};
use crate::Amount;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EconomicsError {
    #[error("{name} must be a finite number, got {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("{name} must lie in [0, 1], got {value}")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    #[error("error probability is zero: no finite bond satisfies the falsification condition")]
    Unfalsifiable,
    #[error("invalid recursion schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid bond sizing policy: {0}")]
    InvalidPolicy(String),
    #[error("token amount overflow")]
    Overflow,
}

pub type Result<T, E = EconomicsError> = std::result::Result<T, E>;

pub(crate) fn exact<S: Scalar>(name: &'static str, value: &S) -> Result<BigRational> {
    value.to_exact().ok_or(EconomicsError::NonFinite {
        name,
        value: value.to_f64(),
    })
}

pub(crate) fn probability<S: Scalar>(name: &'static str, value: &S) -> Result<BigRational> {
    let p = exact(name, value)?;
    if scalar::is_unit_interval(&p) {
        Ok(p)
    } else {
        Err(EconomicsError::ProbabilityOutOfRange {
            name,
            value: value.to_f64(),
        })
    }
}

/// Bond `B`, falsification cost `F` and error probability `P_e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsificationParams<S> {
    pub bond: Amount,
    pub falsification_cost: Amount,
    pub error_probability: S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Falsification {
    Holds,
    Fails,
    /// `P_e = 0`: no error to find, so no finite bond can make exposure pay.
    Unfalsifiable,
}

impl Falsification {
    pub fn holds(self) -> bool {
        matches!(self, Falsification::Holds)
    }
}

/// Bonds posted by the three roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoleBonds {
    pub solver_bond: Amount,
    pub challenger_bond: Amount,
    pub verifier_bond: Amount,
}

/// One level of the recursion: the error probability at that depth and the
/// bond exposed there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthTerm<S> {
    pub error_probability: S,
    pub bond: Amount,
}

/// Discounted multi-level schedule. Costs grow geometrically with depth,
/// `F_t = cost_growth^t * base_cost`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursionSchedule<S> {
    pub horizon: u32,
    pub discount: S,
    pub cost_growth: S,
    pub base_cost: Amount,
    pub per_depth: Vec<DepthTerm<S>>,
}

impl<S: Scalar> RecursionSchedule<S> {
    pub fn validate(&self) -> Result<()> {
        if self.per_depth.len() != self.horizon as usize + 1 {
            return Err(EconomicsError::InvalidSchedule(format!(
                "expected {} per-depth entries, got {}",
                self.horizon as usize + 1,
                self.per_depth.len()
            )));
        }
        let discount = exact("discount", &self.discount)?;
        if !discount.is_positive() || discount > BigRational::one() {
            return Err(EconomicsError::InvalidSchedule(
                "discount must lie in (0, 1]".into(),
            ));
        }
        if !exact("cost_growth", &self.cost_growth)?.is_positive() {
            return Err(EconomicsError::InvalidSchedule(
                "cost_growth must be positive".into(),
            ));
        }
        for term in &self.per_depth {
            probability("error_probability", &term.error_probability)?;
        }
        Ok(())
    }

    /// Falsification cost at depth `t`.
    pub fn cost_at(&self, depth: u32) -> S {
        scalar::powi(&self.cost_growth, depth) * S::from_amount(self.base_cost)
    }
}

/// Sizing rules for challenger and verifier bonds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BondSizingPolicy<S> {
    /// `B_C = round(challenger_multiplier * B_S)`, at least one unit.
    pub challenger_multiplier: S,
    pub verifier_floor: Amount,
    pub verifier_fraction: S,
    /// Growth of the committed share per recursion level.
    pub depth_share_growth: S,
}

impl<S: Scalar> BondSizingPolicy<S> {
    pub fn validate(&self) -> Result<()> {
        if !exact("challenger_multiplier", &self.challenger_multiplier)?.is_positive() {
            return Err(EconomicsError::InvalidPolicy(
                "challenger_multiplier must be positive".into(),
            ));
        }
        let fraction = exact("verifier_fraction", &self.verifier_fraction)?;
        if !fraction.is_positive() || fraction > BigRational::one() {
            return Err(EconomicsError::InvalidPolicy(
                "verifier_fraction must lie in (0, 1]".into(),
            ));
        }
        if exact("depth_share_growth", &self.depth_share_growth)? < BigRational::one() {
            return Err(EconomicsError::InvalidPolicy(
                "depth_share_growth must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// `B > F / P_e`, decided exactly as `B * P_e > F`.
pub fn falsification_holds<S: Scalar>(params: &FalsificationParams<S>) -> Result<Falsification> {
    let p_e = probability("error_probability", &params.error_probability)?;
    if p_e.is_zero() {
        return Ok(Falsification::Unfalsifiable);
    }
    let lhs = exact_amount(params.bond) * p_e;
    Ok(if lhs > exact_amount(params.falsification_cost) {
        Falsification::Holds
    } else {
        Falsification::Fails
    })
}

/// Expected loss `P_e * B_S` of submitting an incorrect result.
pub fn expected_loss_incorrect<S: Scalar>(error_probability: &S, solver_bond: Amount) -> S {
    error_probability.clone() * S::from_amount(solver_bond)
}

/// Expected value of challenging: `P_e * beta * B_S - F - (1 - P_e) * B_C`.
///
/// `beta = 1` and `challenger_bond = 0` give the bare formula without a
/// challenger bond or a burn split.
pub fn challenger_ev<S: Scalar>(
    error_probability: &S,
    solver_bond: Amount,
    falsification_cost: Amount,
    challenger_bond: Amount,
    reward_share: &S,
) -> S {
    let p = error_probability.clone();
    p.clone() * reward_share.clone() * S::from_amount(solver_bond)
        - S::from_amount(falsification_cost)
        - (S::one() - p) * S::from_amount(challenger_bond)
}

/// Exact value of [`challenger_ev`].
pub fn challenger_ev_exact<S: Scalar>(
    error_probability: &S,
    solver_bond: Amount,
    falsification_cost: Amount,
    challenger_bond: Amount,
    reward_share: &S,
) -> Result<BigRational> {
    let p = probability("error_probability", error_probability)?;
    let beta = exact("reward_share", reward_share)?;
    Ok(p.clone() * beta * exact_amount(solver_bond)
        - exact_amount(falsification_cost)
        - (BigRational::one() - p) * exact_amount(challenger_bond))
}

/// `B_V > F / P_e` for a verifier's exposure.
pub fn verifier_condition_holds<S: Scalar>(
    verifier_bond: Amount,
    falsification_cost: Amount,
    error_probability: &S,
) -> Result<Falsification> {
    falsification_holds(&FalsificationParams {
        bond: verifier_bond,
        falsification_cost,
        error_probability: error_probability.clone(),
    })
}

/// Discounted value of surfacing an error across all recursion levels:
/// `sum_t discount^t * (P_{e,t} * B_t - cost_growth^t * F_0)`, and whether it
/// is strictly positive (decided exactly).
pub fn recursive_viability<S: Scalar>(schedule: &RecursionSchedule<S>) -> Result<(S, bool)> {
    schedule.validate()?;
    let mut value = S::zero();
    let mut weight = S::one();
    let mut cost = S::from_amount(schedule.base_cost);
    for term in &schedule.per_depth {
        let gain = term.error_probability.clone() * S::from_amount(term.bond);
        value = value + weight.clone() * (gain - cost.clone());
        weight = weight * schedule.discount.clone();
        cost = cost * schedule.cost_growth.clone();
    }

    let discount = exact("discount", &schedule.discount)?;
    let growth = exact("cost_growth", &schedule.cost_growth)?;
    let base = exact_amount(schedule.base_cost);
    let mut total = BigRational::zero();
    for (t, term) in schedule.per_depth.iter().enumerate() {
        let t = t as u32;
        let p = exact("error_probability", &term.error_probability)?;
        total +=
            exact_pow(&discount, t) * (p * exact_amount(term.bond) - exact_pow(&growth, t) * &base);
    }
    Ok((value, total.is_positive()))
}

/// Challenger bond derived from the solver bond: `round(mu * B_S)`, min 1.
pub fn challenger_bond_from_solver<S: Scalar>(
    solver_bond: Amount,
    policy: &BondSizingPolicy<S>,
) -> Result<Amount> {
    let mu = exact("challenger_multiplier", &policy.challenger_multiplier)?;
    let raw = scalar::round_to_amount(&(mu * exact_amount(solver_bond)))
        .ok_or(EconomicsError::Overflow)?;
    Ok(raw.max(1))
}

/// Per-ruling verifier exposure: a floor plus a depth-deepening share of the
/// verifier's stake, capped at `stake + floor`.
pub fn verifier_exposure<S: Scalar>(
    stake: Amount,
    depth: u32,
    policy: &BondSizingPolicy<S>,
) -> Result<Amount> {
    let fraction = exact("verifier_fraction", &policy.verifier_fraction)?;
    let growth = exact("depth_share_growth", &policy.depth_share_growth)?;
    let share = fraction * exact_pow(&growth, depth) * exact_amount(stake);
    let share = scalar::round_to_amount(&share)
        .unwrap_or(Amount::MAX)
        .min(stake);
    policy
        .verifier_floor
        .checked_add(share)
        .ok_or(EconomicsError::Overflow)
}

/// Smallest whole bond strictly greater than `(1 + margin) * F / P_e`.
pub fn min_solver_bond<S: Scalar>(
    falsification_cost: Amount,
    error_probability: &S,
    margin: &S,
) -> Result<Amount> {
    let p = probability("error_probability", error_probability)?;
    if p.is_zero() {
        return Err(EconomicsError::Unfalsifiable);
    }
    let margin = exact("margin", margin)?;
    if margin.is_negative() {
        return Err(EconomicsError::NonFinite {
            name: "margin",
            value: Scalar::to_f64(&margin),
        });
    }
    let threshold = (BigRational::one() + margin) * exact_amount(falsification_cost) / p;
    let next: BigInt = threshold.floor().to_integer() + 1;
    next.to_u64().ok_or(EconomicsError::Overflow)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(bond: Amount, f: Amount, p: f64) -> FalsificationParams<f64> {
        FalsificationParams {
            bond,
            falsification_cost: f,
            error_probability: p,
        }
    }

    fn policy(mu: f64) -> BondSizingPolicy<f64> {
        BondSizingPolicy {
            challenger_multiplier: mu,
            verifier_floor: 1,
            verifier_fraction: 0.1,
            depth_share_growth: 2.0,
        }
    }

    #[test]
    fn falsification_examples() {
        assert_eq!(
            falsification_holds(&params(10, 2, 0.5)),
            Ok(Falsification::Holds)
        );
        assert_eq!(
            falsification_holds(&params(4, 2, 0.5)),
            Ok(Falsification::Fails)
        );
        assert_eq!(
            falsification_holds(&params(4, 2, 0.0)),
            Ok(Falsification::Unfalsifiable)
        );
        assert!(matches!(
            falsification_holds(&params(4, 2, 1.5)),
            Err(EconomicsError::ProbabilityOutOfRange { .. })
        ));
    }

    #[test]
    fn expected_loss_examples() {
        assert_eq!(expected_loss_incorrect(&0.5, 10), 5.0);
        assert_eq!(expected_loss_incorrect(&0.0, 1234), 0.0);
        assert_eq!(expected_loss_incorrect(&1.0, 7), 7.0);
    }

    #[test]
    fn challenger_ev_examples() {
        assert!((challenger_ev(&0.5, 10, 2, 0, &1.0) - 3.0).abs() < 1e-9);
        assert!((challenger_ev(&0.5, 10, 2, 4, &1.0) - 1.0).abs() < 1e-9);
        assert!((challenger_ev(&0.0, 10, 2, 4, &1.0) - (-6.0)).abs() < 1e-9);
        assert!((challenger_ev(&0.0, 10, 2, 0, &0.5) - (-2.0)).abs() < 1e-9);
    }

    #[test]
    fn verifier_condition_examples() {
        assert!(verifier_condition_holds(5, 2, &0.5).unwrap().holds());
        assert_eq!(
            verifier_condition_holds(4, 2, &0.5),
            Ok(Falsification::Fails)
        );
        assert_eq!(
            verifier_condition_holds(4, 2, &0.0),
            Ok(Falsification::Unfalsifiable)
        );
    }

    #[test]
    fn recursive_viability_examples() {
        let single = RecursionSchedule {
            horizon: 0,
            discount: 1.0,
            cost_growth: 1.0,
            base_cost: 2,
            per_depth: vec![DepthTerm {
                error_probability: 0.5,
                bond: 10,
            }],
        };
        let (v, ok) = recursive_viability(&single).unwrap();
        assert!((v - 3.0).abs() < 1e-9 && ok);

        let two = RecursionSchedule {
            horizon: 1,
            discount: 0.5,
            cost_growth: 2.0,
            base_cost: 2,
            per_depth: vec![
                DepthTerm {
                    error_probability: 0.5,
                    bond: 10,
                },
                DepthTerm {
                    error_probability: 0.5,
                    bond: 10,
                },
            ],
        };
        let (v, ok) = recursive_viability(&two).unwrap();
        assert!((v - 3.5).abs() < 1e-9 && ok);

        let broke = RecursionSchedule {
            horizon: 2,
            discount: 0.9,
            cost_growth: 1.5,
            base_cost: 1,
            per_depth: vec![
                DepthTerm {
                    error_probability: 0.7,
                    bond: 0
                };
                3
            ],
        };
        let (v, ok) = recursive_viability(&broke).unwrap();
        assert!(v < 0.0 && !ok);
    }

    #[test]
    fn schedule_validation() {
        let mut s = RecursionSchedule {
            horizon: 1,
            discount: 1.0,
            cost_growth: 1.0,
            base_cost: 1,
            per_depth: vec![DepthTerm {
                error_probability: 0.5,
                bond: 1,
            }],
        };
        assert!(matches!(
            recursive_viability(&s),
            Err(EconomicsError::InvalidSchedule(_))
        ));
        s.horizon = 0;
        s.discount = 0.0;
        assert!(recursive_viability(&s).is_err());
        s.discount = 1.0;
        s.cost_growth = -1.0;
        assert!(recursive_viability(&s).is_err());
    }

    #[test]
    fn challenger_bond_examples() {
        assert_eq!(challenger_bond_from_solver(10, &policy(0.5)), Ok(5));
        assert_eq!(challenger_bond_from_solver(10, &policy(1.0)), Ok(10));
        assert_eq!(challenger_bond_from_solver(1, &policy(0.1)), Ok(1));
        // 0.25 * 10 = 2.5 rounds away from zero.
        assert_eq!(challenger_bond_from_solver(10, &policy(0.25)), Ok(3));
    }

    #[test]
    fn verifier_exposure_examples() {
        let p = policy(0.5);
        assert_eq!(verifier_exposure(100, 0, &p), Ok(11));
        assert_eq!(verifier_exposure(100, 1, &p), Ok(21));
        assert_eq!(verifier_exposure(100, 10, &p), Ok(101));
        assert_eq!(verifier_exposure(0, 3, &p), Ok(1));
    }

    #[test]
    fn min_solver_bond_examples() {
        assert_eq!(min_solver_bond(2, &0.5, &0.0), Ok(5));
        assert_eq!(min_solver_bond(2, &1.0, &0.0), Ok(3));
        assert_eq!(min_solver_bond(0, &0.3, &0.0), Ok(1));
        assert_eq!(
            min_solver_bond(2, &0.0, &0.0),
            Err(EconomicsError::Unfalsifiable)
        );
        assert_eq!(min_solver_bond(2, &0.5, &0.5), Ok(7));
    }

    #[test]
    fn policy_validation() {
        assert!(policy(0.5).validate().is_ok());
        assert!(policy(0.0).validate().is_err());
        let mut p = policy(1.0);
        p.verifier_fraction = 1.5;
        assert!(p.validate().is_err());
        p.verifier_fraction = 0.5;
        p.depth_share_growth = 0.5;
        assert!(p.validate().is_err());
    }
}
