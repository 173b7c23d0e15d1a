//! Single-claim Monte Carlo estimators of the solver's loss and the
//! challenger's payoff.
//!
//! Each trial settles one claim on a fresh ledger: an error exists with
//! probability `P_e`; the challenger pays `F`, stakes `B_C`, and either wins
//! the solver's slashed bond (net of the burn) or forfeits its own stake.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ledger::{EscrowKey, EscrowPurpose, Ledger};
use crate::scalar::Scalar;
use crate::{AgentId, Amount, ProcessId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorRole {
    /// Realized payoff of a solver that always cheats: `-B_S` when caught.
    SolverLoss,
    Challenger,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeParams<S> {
    pub error_probability: S,
    pub solver_bond: Amount,
    pub falsification_cost: Amount,
    pub challenger_bond: Amount,
    pub reward_share: S,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: u64,
}

const SOLVER: AgentId = AgentId(1);
const CHALLENGER: AgentId = AgentId(2);
const CLAIM: ProcessId = ProcessId(0);

/// Sample mean and standard error of the realized payoff over `trials`
/// independent episodes.
///
/// Panics if `trials` is zero or a probability lies outside `[0, 1]`.
pub fn monte_carlo_ev<S: Scalar>(
    role: EstimatorRole,
    params: &EpisodeParams<S>,
    trials: u64,
    seed: u64,
) -> Estimate {
    assert!(trials >= 1, "at least one trial is required");
    let p = params.error_probability.to_f64();
    let beta = params.reward_share.to_f64();
    assert!(
        (0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&beta),
        "probabilities must lie in [0, 1]"
    );
    let burn_share = S::one() - params.reward_share.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut base = Ledger::new();
    let funds = params.solver_bond.max(1) + params.challenger_bond.max(1);
    base.deposit(SOLVER, funds, 0).expect("positive");
    base.deposit(CHALLENGER, funds, 0).expect("positive");
    let solver_key = EscrowKey::new(CLAIM, SOLVER, EscrowPurpose::SolverBond);
    let challenger_key = EscrowKey::new(CLAIM, CHALLENGER, EscrowPurpose::ChallengerBond(0));

    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let error = rng.random_bool(p);
        let mut ledger = base.clone();
        if params.solver_bond > 0 {
            ledger
                .lock(solver_key, params.solver_bond, 1)
                .expect("funded");
        }
        let payoff = match role {
            EstimatorRole::SolverLoss => {
                if error && params.solver_bond > 0 {
                    ledger
                        .slash(solver_key, CHALLENGER, &burn_share, 2)
                        .expect("locked");
                }
                ledger.free(SOLVER) as f64 + ledger.escrow(&solver_key).unwrap_or(0) as f64
                    - funds as f64
            }
            EstimatorRole::Challenger => {
                if params.challenger_bond > 0 {
                    ledger
                        .lock(challenger_key, params.challenger_bond, 1)
                        .expect("funded");
                }
                if error {
                    if params.solver_bond > 0 {
                        ledger
                            .slash(solver_key, CHALLENGER, &burn_share, 2)
                            .expect("locked");
                    }
                    if params.challenger_bond > 0 {
                        ledger.release(challenger_key, 2).expect("locked");
                    }
                } else if params.challenger_bond > 0 {
                    ledger
                        .slash(challenger_key, SOLVER, &burn_share, 2)
                        .expect("locked");
                }
                ledger.free(CHALLENGER) as f64 - funds as f64 - params.falsification_cost as f64
            }
        };
        sum += payoff;
        sum_sq += payoff * payoff;
    }
    let n = trials as f64;
    let mean = sum / n;
    let variance = if trials > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Estimate {
        mean,
        std_error: (variance / n).sqrt(),
        trials,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p: f64, b_s: Amount, f: Amount, b_c: Amount, beta: f64) -> EpisodeParams<f64> {
        EpisodeParams {
            error_probability: p,
            solver_bond: b_s,
            falsification_cost: f,
            challenger_bond: b_c,
            reward_share: beta,
        }
    }

    #[test]
    fn deterministic_limits() {
        let e = monte_carlo_ev(
            EstimatorRole::SolverLoss,
            &params(1.0, 10, 2, 0, 1.0),
            1000,
            3,
        );
        assert_eq!((e.mean, e.std_error), (-10.0, 0.0));
        let e = monte_carlo_ev(
            EstimatorRole::Challenger,
            &params(0.0, 10, 2, 0, 1.0),
            1000,
            3,
        );
        assert_eq!((e.mean, e.std_error), (-2.0, 0.0));
        let e = monte_carlo_ev(
            EstimatorRole::Challenger,
            &params(0.0, 10, 2, 3, 1.0),
            10,
            3,
        );
        assert_eq!(e.mean, -5.0);
    }

    #[test]
    fn challenger_mean_near_analytic() {
        let e = monte_carlo_ev(
            EstimatorRole::Challenger,
            &params(0.5, 10, 2, 0, 1.0),
            100_000,
            11,
        );
        assert!((e.mean - 3.0).abs() <= 3.0 * e.std_error, "{e:?}");
    }

    #[test]
    fn same_seed_same_estimate() {
        let p = params(0.3, 8, 1, 2, 0.5);
        assert_eq!(
            monte_carlo_ev(EstimatorRole::Challenger, &p, 500, 9),
            monte_carlo_ev(EstimatorRole::Challenger, &p, 500, 9)
        );
    }
}
