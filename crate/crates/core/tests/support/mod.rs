//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls into the library's economics or chain code; values
//! are recomputed from first principles in exact rationals or plain
//! integers.

#![allow(dead_code)]

use std::collections::BTreeMap;

use bondgame::protocol::{
    verdict_commitment, ConstraintSet, Engine, EngineParams, Outcome, ResultRecord, TaskSpec,
    Verdict,
};
use bondgame::sim::ScenarioConfig;
use bondgame::{AgentId, Amount, ProcessId};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

pub fn q(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn int(n: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Expected payoffs of the single-claim game found by enumerating the
/// states of the world and both players' pure actions.
pub struct Enumerated {
    pub challenger_contests: bool,
    pub honest: BigRational,
    pub cheat: BigRational,
}

impl Enumerated {
    pub fn solver_prefers_honesty(&self) -> bool {
        self.honest >= self.cheat
    }
}

/// `p` is the chance the claim is wrong, `beta` the reward share.
pub fn enumerate_solver_game(
    p: &BigRational,
    bond: u64,
    f: u64,
    gain: u64,
    fee: u64,
    b_c: u64,
    beta: &BigRational,
) -> Enumerated {
    let states = [(p.clone(), true), (BigRational::one() - p, false)];
    let challenge_payoff = |wrong: bool| {
        if wrong {
            beta * int(bond) - int(f)
        } else {
            -(int(f) + int(b_c))
        }
    };
    let contest_value: BigRational = states.iter().map(|(w, s)| w * challenge_payoff(*s)).sum();
    let pass_value = BigRational::zero();
    let challenger_contests = contest_value > pass_value;
    let cheat: BigRational = states
        .iter()
        .map(|(w, caught)| {
            let slashed = if challenger_contests && *caught {
                int(bond)
            } else {
                BigRational::zero()
            };
            w * (int(gain) - slashed)
        })
        .sum();
    Enumerated {
        challenger_contests,
        honest: int(fee),
        cheat,
    }
}

/// `sum_t delta^t (p_t B_t - gamma^t F)` by direct expansion.
pub fn direct_viability(
    delta: &BigRational,
    gamma: &BigRational,
    f: u64,
    terms: &[(BigRational, u64)],
) -> BigRational {
    let mut total = BigRational::zero();
    for (t, (p, b)) in terms.iter().enumerate() {
        let mut d = BigRational::one();
        let mut g = BigRational::one();
        for _ in 0..t {
            d *= delta;
            g *= gamma;
        }
        total += d * (p * int(*b) - g * int(f));
    }
    total
}

/// Relative difference, measured against the larger of the reference and
/// `scale`.
pub fn rel_err(got: f64, want: f64, scale: f64) -> f64 {
    (got - want).abs() / want.abs().max(scale).max(f64::MIN_POSITIVE)
}

/// One verifier's behaviour in a round: a revealed verdict, or none.
pub type Vote = Option<Verdict>;

#[derive(Debug, Clone)]
pub struct OracleLevel {
    pub challenger: AgentId,
    pub challenger_bond: Amount,
    /// Member, exposure and vote, in member id order.
    pub quorum: Vec<(AgentId, Amount, Vote)>,
}

pub fn majority(quorum: &[(AgentId, Amount, Vote)]) -> Verdict {
    let over = quorum
        .iter()
        .filter(|m| m.2 == Some(Verdict::OverturnTarget))
        .count();
    let up = quorum
        .iter()
        .filter(|m| m.2 == Some(Verdict::UpholdTarget))
        .count();
    if over > up {
        Verdict::OverturnTarget
    } else {
        Verdict::UpholdTarget
    }
}

/// Whether the ruling at level `t` stands: the last one does, an earlier one
/// stands iff the ruling above it stands and upheld it, or fell and
/// overturned it.
pub fn ruling_stands(verdicts: &[Verdict], t: usize) -> bool {
    if t + 1 == verdicts.len() {
        return true;
    }
    let above = ruling_stands(verdicts, t + 1);
    (verdicts[t + 1] == Verdict::UpholdTarget) == above
}

/// Whether the target of level `t` (the result for `t = 0`) stands.
pub fn target_stands(verdicts: &[Verdict], t: usize) -> bool {
    (verdicts[t] == Verdict::UpholdTarget) == ruling_stands(verdicts, t)
}

pub struct OracleSettlement {
    pub outcome: Outcome,
    pub net: BTreeMap<AgentId, i128>,
    pub burned: Amount,
}

/// Half-away rounding of `(den - num) / den * x`.
fn burn_of(x: Amount, beta: (u64, u64)) -> Amount {
    let (num, den) = beta;
    let scaled = 2 * (den - num) as u128 * x as u128 + den as u128;
    (scaled / (2 * den as u128)) as Amount
}

/// Payoffs implied by a finished chain, recomputed rule by rule.
pub fn oracle_settlement(
    originator: AgentId,
    fee: Amount,
    solver: AgentId,
    solver_bond: Amount,
    levels: &[OracleLevel],
    beta: (u64, u64),
) -> OracleSettlement {
    let verdicts: Vec<Verdict> = levels.iter().map(|l| majority(&l.quorum)).collect();
    let mut net: BTreeMap<AgentId, i128> = BTreeMap::new();
    let mut burned = 0;
    let mut slash =
        |net: &mut BTreeMap<AgentId, i128>, from: AgentId, x: Amount, to: &[AgentId]| {
            if x == 0 {
                return;
            }
            *net.entry(from).or_default() -= x as i128;
            if to.is_empty() {
                burned += x;
                return;
            }
            let burn = burn_of(x, beta);
            burned += burn;
            let reward = x - burn;
            for (i, agent) in to.iter().enumerate() {
                let share =
                    reward / to.len() as u64 + u64::from((i as u64) < reward % to.len() as u64);
                *net.entry(*agent).or_default() += share as i128;
            }
        };

    let result_stands = verdicts.is_empty() || target_stands(&verdicts, 0);
    if result_stands {
        *net.entry(originator).or_default() -= fee as i128;
        *net.entry(solver).or_default() += fee as i128;
    } else {
        slash(&mut net, solver, solver_bond, &[levels[0].challenger]);
    }

    let correct = |t: usize| -> Vec<AgentId> {
        let stands = target_stands(&verdicts, t);
        levels[t]
            .quorum
            .iter()
            .filter(|m| m.2.is_some_and(|v| (v == Verdict::UpholdTarget) == stands))
            .map(|m| m.0)
            .collect()
    };
    let defenders = |t: usize| if t == 0 { vec![solver] } else { correct(t - 1) };

    for (t, level) in levels.iter().enumerate() {
        if target_stands(&verdicts, t) {
            slash(
                &mut net,
                level.challenger,
                level.challenger_bond,
                &defenders(t),
            );
        }
        let to = if !ruling_stands(&verdicts, t) {
            vec![levels[t + 1].challenger]
        } else if target_stands(&verdicts, t) {
            defenders(t)
        } else {
            vec![level.challenger]
        };
        let right = correct(t);
        for (member, exposure, _) in &level.quorum {
            if !right.contains(member) {
                slash(&mut net, *member, *exposure, &to);
            }
        }
    }
    net.retain(|_, v| *v != 0);
    let outcome = if result_stands {
        Outcome::ResultStands
    } else {
        Outcome::ResultOverturned
    };
    OracleSettlement {
        outcome,
        net,
        burned,
    }
}

/// `floor + min(stake, round(fraction * growth^depth * stake))` for the
/// parameters the chain fixture uses: floor 1, fraction 1/10, growth 2.
pub fn fixture_exposure(stake: Amount, depth: u32) -> Amount {
    let share = (stake as u128 * (1u128 << depth) * 2 + 10) / 20;
    1 + (share as Amount).min(stake)
}

pub const ORIGINATOR: AgentId = AgentId(100);
pub const SOLVER: AgentId = AgentId(1);
pub const CHALLENGERS: [AgentId; 3] = [AgentId(2), AgentId(3), AgentId(4)];
pub const FIXTURE_STAKE: Amount = 50;
pub const FIXTURE_BOND: Amount = 11;
pub const FIXTURE_FEE: Amount = 3;

/// Engine with a funded originator, solver, three challengers and nine
/// verifiers staking 50 each. `mu = 1/2`, floor 1, fraction 1/10, growth 2.
pub fn chain_engine(beta: f64) -> Engine<f64> {
    let mut params = EngineParams::<f64>::standard();
    params.reward_share = beta;
    let mut e = Engine::new(params).unwrap();
    for a in [ORIGINATOR, SOLVER].into_iter().chain(CHALLENGERS) {
        e.deposit(a, 1_000, 0).unwrap();
    }
    for v in 10..19 {
        e.deposit(AgentId(v), 1_000, 0).unwrap();
        e.register_verifier(AgentId(v), FIXTURE_STAKE, 0).unwrap();
    }
    e
}

/// Drives one process through `plan`: each entry is one challenged level
/// and the votes its quorum casts, in quorum order. Returns the process and
/// the tick at which it finalized.
pub fn drive_chain(
    e: &mut Engine<f64>,
    quorum_size: u32,
    plan: &[Vec<Vote>],
    seed: u64,
) -> (ProcessId, u64) {
    let constraints = ConstraintSet {
        challenge_window: 5,
        ruling_challenge_window: 5,
        quorum_size,
        max_recursion_depth: 3,
        ..ConstraintSet::default()
    };
    let spec = TaskSpec::new(
        "chain",
        constraints,
        "intent",
        b"data".to_vec(),
        ORIGINATOR,
        FIXTURE_FEE,
        FIXTURE_BOND,
    );
    let pid = e.publish_intent(spec, 0).unwrap();
    e.register_commitment(pid, SOLVER, FIXTURE_BOND, 0).unwrap();
    e.select_solver(pid, 0, 0).unwrap();
    e.submit_result(
        pid,
        ResultRecord::new("chain".into(), SOLVER, b"o".to_vec(), b"e".to_vec(), 0),
        0,
    )
    .unwrap();
    let mut now = 1;
    for (t, votes) in plan.iter().enumerate() {
        let bond = e.required_challenger_bond(pid).unwrap();
        e.open_challenge(pid, CHALLENGERS[t], b"evidence".to_vec(), bond, now)
            .unwrap();
        let quorum = e
            .select_verifiers(pid, seed.wrapping_add(t as u64), now)
            .unwrap();
        for (v, vote) in quorum.iter().zip(votes) {
            let committed = vote.unwrap_or(Verdict::UpholdTarget);
            e.commit_verdict(
                pid,
                *v,
                verdict_commitment(committed, &v.0.to_be_bytes()),
                now,
            )
            .unwrap();
        }
        for (v, vote) in quorum.iter().zip(votes) {
            if let Some(verdict) = vote {
                e.reveal_verdict(pid, *v, *verdict, v.0.to_be_bytes().to_vec(), now + 1)
                    .unwrap();
            }
        }
        let deadline = now + e.params().commit_window + e.params().reveal_window;
        e.advance_time(pid, deadline).unwrap();
        now = deadline + 1;
    }
    let deadline = e.state(pid).unwrap().window_deadline.unwrap();
    e.advance_time(pid, deadline).unwrap();
    (pid, deadline)
}

/// Every vote vector of length `n` over uphold, overturn and no reveal.
pub fn vote_vectors(n: usize) -> Vec<Vec<Vote>> {
    let options = [
        Some(Verdict::UpholdTarget),
        Some(Verdict::OverturnTarget),
        None,
    ];
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                options.iter().map(move |o| {
                    let mut v = prefix.clone();
                    v.push(*o);
                    v
                })
            })
            .collect();
    }
    out
}

/// Small but complete population used by several end-to-end tests.
pub fn scenario(text: &str) -> ScenarioConfig {
    ScenarioConfig::from_toml(text).unwrap()
}
