//! End-to-end acceptance gate: eight criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the verdict lines are always shown.
//! Exits non-zero if any criterion fails.

mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use bondgame::agents::{self, Role};
use bondgame::economics::{self, DepthTerm, FalsificationParams, RecursionSchedule};
use bondgame::eventlog::RecordKind;
use bondgame::ledger::EscrowKey;
use bondgame::sim::config::{AgentGroup, CheckEqConfig};
use bondgame::sim::{self, monte_carlo_ev, EpisodeParams, EstimatorRole, ScenarioConfig};
use bondgame::{AgentId, Amount, Exact};
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, budget_secs: u64) -> bool {
    elapsed <= Duration::from_secs(budget_secs)
}

fn falsification_boundary() -> Check {
    let start = Instant::now();
    let grid = CheckEqConfig {
        error_probabilities: (1..=9).map(|k| k as f64 / 10.0).collect(),
        solver_bonds: (1..=40).collect(),
        falsification_cost: 2,
        cheat_gain: None,
        fee: 0,
        challenger_bond: 0,
        reward_share: 1.0,
        verifier_bond: 0,
    };
    let rows = match sim::check_eq(&grid) {
        Ok(rows) => rows,
        Err(e) => return check(false, format!("check_eq failed: {e}")),
    };
    let elapsed = start.elapsed();
    let mut mismatches = 0;
    let mut cells = 0;
    for row in rows.iter().filter(|r| r.role == Role::Solver) {
        cells += 1;
        let k = (row.error_probability * 10.0).round() as i64;
        let p = q(k, 10);
        let game = enumerate_solver_game(&p, row.solver_bond, 2, 2, 0, 0, &q(1, 1));
        let falsified = p.clone() * int(row.solver_bond) > int(2);
        let expected = game.solver_prefers_honesty();
        if row.equilibrium != expected
            || row.falsification_holds != falsified
            || expected != falsified
        {
            mismatches += 1;
        }
    }
    let pass = cells == 360 && mismatches == 0 && within(elapsed, 10);
    check(
        pass,
        format!(
            "falsification boundary: {cells} solver cells, {mismatches} mismatches, {elapsed:.2?}"
        ),
    )
}

fn monte_carlo_agreement() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut agree = 0;
    let sets = 20;
    for i in 0..sets {
        let role = if i % 2 == 0 {
            EstimatorRole::Challenger
        } else {
            EstimatorRole::SolverLoss
        };
        let k = rng.random_range(1..20i64);
        let beta = [0.25, 0.5, 0.75, 1.0][rng.random_range(0..4)];
        let bond = 4 * rng.random_range(1..=10u64);
        let f = rng.random_range(0..=5u64);
        let b_c = rng.random_range(0..=10u64);
        let p = k as f64 / 20.0;
        let params = EpisodeParams {
            error_probability: p,
            solver_bond: bond,
            falsification_cost: f,
            challenger_bond: b_c,
            reward_share: beta,
        };
        let est = monte_carlo_ev(role, &params, 100_000, 7_000 + i);
        let pe = q(k, 20);
        let exact_beta = q((beta * 4.0) as i64, 4);
        let analytic = match role {
            EstimatorRole::Challenger => {
                pe.clone() * exact_beta * int(bond) - int(f) - (q(1, 1) - pe) * int(b_c)
            }
            EstimatorRole::SolverLoss => -(pe * int(bond)),
        };
        let analytic = analytic.to_f64().unwrap();
        if (est.mean - analytic).abs() <= 3.0 * est.std_error {
            agree += 1;
        }
    }
    let elapsed = start.elapsed();
    // At 3 SE a single estimate lies inside with probability ~0.997, so 19 of 20 is the 95% bar.
    let pass = agree * 100 >= 95 * sets && within(elapsed, 60);
    check(
        pass,
        format!("Monte Carlo vs analytic EV: {agree}/{sets} within 3 SE, {elapsed:.2?}"),
    )
}

fn viability_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst = 0.0f64;
    let mut exact_mismatch = 0;
    let mut flag_mismatch = 0;
    for _ in 0..1_000 {
        let horizon = rng.random_range(0..=8u32);
        let delta_k = rng.random_range(1..=100i64);
        let gamma_k = rng.random_range(50..=300i64);
        let f = rng.random_range(0..=20u64);
        let terms: Vec<(i64, u64)> = (0..=horizon)
            .map(|_| (rng.random_range(0..=1000i64), rng.random_range(0..=500u64)))
            .collect();

        let delta = q(delta_k, 100);
        let gamma = q(gamma_k, 100);
        let exact_terms: Vec<(BigRational, u64)> =
            terms.iter().map(|(p, b)| (q(*p, 1000), *b)).collect();
        let want = direct_viability(&delta, &gamma, f, &exact_terms);
        let scale = direct_viability(&delta, &gamma, 0, &exact_terms)
            .to_f64()
            .unwrap()
            + direct_viability(&delta, &gamma, f, &vec![(q(0, 1), 0); terms.len()])
                .to_f64()
                .unwrap()
                .abs();

        let schedule = RecursionSchedule {
            horizon,
            discount: delta_k as f64 / 100.0,
            cost_growth: gamma_k as f64 / 100.0,
            base_cost: f,
            per_depth: terms
                .iter()
                .map(|(p, b)| DepthTerm {
                    error_probability: *p as f64 / 1000.0,
                    bond: *b,
                })
                .collect(),
        };
        let (value, viable) = economics::recursive_viability(&schedule).unwrap();
        worst = worst.max(rel_err(value, want.to_f64().unwrap(), scale));
        if viable != (want > q(0, 1)) {
            flag_mismatch += 1;
        }

        let exact_schedule: RecursionSchedule<Exact> = RecursionSchedule {
            horizon,
            discount: delta.clone(),
            cost_growth: gamma.clone(),
            base_cost: f,
            per_depth: exact_terms
                .iter()
                .map(|(p, b)| DepthTerm {
                    error_probability: p.clone(),
                    bond: *b,
                })
                .collect(),
        };
        let (exact_value, _) = economics::recursive_viability(&exact_schedule).unwrap();
        if exact_value != want {
            exact_mismatch += 1;
        }
    }
    let pass = worst <= 1e-12 && exact_mismatch == 0 && flag_mismatch == 0;
    check(
        pass,
        format!(
            "recursive viability: 1000 schedules, max f64 rel err {worst:.1e}, {exact_mismatch} exact mismatches, {flag_mismatch} flag mismatches"
        ),
    )
}

/// Exhaustive chains; returns (chains checked, mismatches).
fn chain_sweep(quorum: u32, beta: (u64, u64)) -> (usize, usize) {
    let per_level = vote_vectors(quorum as usize);
    let mut checked = 0;
    let mut mismatches = 0;
    let mut plans: Vec<Vec<Vec<Vote>>> = vec![Vec::new()];
    let mut frontier = plans.clone();
    for _ in 0..3 {
        frontier = frontier
            .into_iter()
            .flat_map(|prefix| {
                per_level.iter().map(move |votes| {
                    let mut p = prefix.clone();
                    p.push(votes.clone());
                    p
                })
            })
            .collect();
        plans.extend(frontier.iter().cloned());
    }
    for (n, plan) in plans.iter().enumerate() {
        let mut e = chain_engine(beta.0 as f64 / beta.1 as f64);
        let (pid, now) = drive_chain(&mut e, quorum, plan, n as u64);
        checked += 1;
        let process = e.process(pid).unwrap().clone();
        let levels: Vec<OracleLevel> = process
            .levels
            .iter()
            .zip(plan)
            .enumerate()
            .map(|(t, (level, votes))| {
                let ruling = level.ruling.as_ref().expect("every planned level is ruled");
                OracleLevel {
                    challenger: level.dispute.challenger,
                    challenger_bond: level.dispute.challenger_bond,
                    quorum: ruling
                        .quorum
                        .iter()
                        .zip(votes)
                        .map(|(v, vote)| (*v, fixture_exposure(FIXTURE_STAKE, t as u32), *vote))
                        .collect(),
                }
            })
            .collect();
        let oracle =
            oracle_settlement(ORIGINATOR, FIXTURE_FEE, SOLVER, FIXTURE_BOND, &levels, beta);
        let exposures_match = process.levels.iter().zip(&levels).all(|(l, o)| {
            let r = l.ruling.as_ref().unwrap();
            o.quorum
                .iter()
                .all(|(v, x, _)| r.verifier_exposure[v] == *x)
        });
        let outcome = e.evaluate_chain(pid).unwrap();
        let escrows: BTreeMap<EscrowKey, Amount> = e.ledger().escrows_of(pid);
        let plan_ = e.plan_settlement(pid).unwrap();
        let complete = plan_.draws() == escrows;
        let settled = e.settle(pid, now).is_ok()
            && e.ledger().escrows_of(pid).is_empty()
            && e.ledger().conservation_holds();
        let same = outcome == oracle.outcome
            && plan_.net_changes() == oracle.net
            && plan_.burned() == oracle.burned;
        if !(same && complete && settled && exposures_match) {
            mismatches += 1;
        }
    }
    (checked, mismatches)
}

fn chain_settlement() -> Check {
    let (a, ma) = chain_sweep(3, (1, 2));
    let (b, mb) = chain_sweep(1, (1, 2));
    let (c, mc) = chain_sweep(1, (3, 4));
    let (d, md) = chain_sweep(1, (1, 1));
    let total = a + b + c + d;
    let bad = ma + mb + mc + md;
    check(
        bad == 0 && a == 1 + 27 + 729 + 19_683,
        format!("chain settlement brute force: {total} chains, {bad} mismatches"),
    )
}

fn random_group(rng: &mut ChaCha8Rng) -> AgentGroup {
    let mut roles = BTreeSet::new();
    for role in [Role::Solver, Role::Challenger, Role::Verifier] {
        if rng.random_bool(0.5) {
            roles.insert(role);
        }
    }
    if roles.is_empty() {
        roles.insert(Role::Challenger);
    }
    AgentGroup {
        count: rng.random_range(1..=3),
        roles,
        solver: [
            agents::SolverStrategy::Rational,
            agents::SolverStrategy::AlwaysHonest,
            agents::SolverStrategy::AlwaysCheat,
        ][rng.random_range(0..3)],
        challenger: [
            agents::ChallengerStrategy::Rational,
            agents::ChallengerStrategy::Subsidized,
            agents::ChallengerStrategy::Passive,
        ][rng.random_range(0..3)],
        verifier: match rng.random_range(0..4) {
            0 => agents::VerifierStrategy::Rational,
            1 => agents::VerifierStrategy::AlwaysCorrect,
            2 => agents::VerifierStrategy::Corrupt,
            _ => agents::VerifierStrategy::Lazy(rng.random_range(0..=10) as f64 / 10.0),
        },
        prior: rng.random_range(0..=10) as f64 / 10.0,
        detection_cost: rng.random_bool(0.5).then(|| rng.random_range(0..=6)),
        stake: rng.random_range(0..=80),
        subsidy_budget: rng.random_range(0..=60),
        cheat_gain: rng.random_range(0..=20),
        balance: rng.random_range(0..=400),
    }
}

pub fn random_config(rng: &mut ChaCha8Rng) -> ScenarioConfig {
    let mut c = ScenarioConfig {
        seed: rng.random(),
        horizon: rng.random_range(20..=400),
        ..Default::default()
    };
    c.beta = [0.0, 0.25, 0.5, 0.75, 1.0][rng.random_range(0..5)];
    c.economics.falsification_cost = rng.random_range(0..=5);
    c.economics.error_probability = rng.random_range(1..=10) as f64 / 10.0;
    c.economics.cost_growth = [1.0, 1.5, 2.0][rng.random_range(0..3)];
    let t = &mut c.tasks;
    t.count = rng.random_range(1..=25);
    t.fee = rng.random_range(0..=5);
    t.solver_bond = if rng.random_bool(0.8) {
        Some(rng.random_range(1..=40))
    } else {
        None
    };
    t.bond_margin = rng.random_range(0..=5) as f64 / 10.0;
    t.interval = rng.random_range(1..=4);
    t.challenge_window = rng.random_range(1..=4);
    t.ruling_challenge_window = rng.random_range(1..=4);
    t.quorum_size = [1, 3][rng.random_range(0..2)];
    t.max_depth = rng.random_range(1..=3);
    t.selection = if rng.random_bool(0.5) {
        bondgame::protocol::SelectionPolicy::UniformRandom
    } else {
        bondgame::protocol::SelectionPolicy::FirstQualified
    };
    t.escalation_target = rng.random_bool(0.5).then(|| "settlement-layer".to_string());
    t.honest_error_rate = rng.random_range(0..=3) as f64 / 10.0;
    t.visibility = rng.random_range(5..=10) as f64 / 10.0;
    let p = &mut c.policy;
    p.challenger_multiplier = rng.random_range(1..=10) as f64 / 10.0;
    p.verifier_floor = rng.random_range(0..=3);
    p.verifier_fraction = rng.random_range(1..=5) as f64 / 10.0;
    p.commit_window = rng.random_range(1..=3);
    p.reveal_window = rng.random_range(1..=3);
    let groups = rng.random_range(1..=4);
    c.agents = (0..groups).map(|_| random_group(rng)).collect();
    let mut solver = random_group(rng);
    solver.roles.insert(Role::Solver);
    let mut verifier = random_group(rng);
    verifier.roles.insert(Role::Verifier);
    c.agents.push(solver);
    c.agents.push(verifier);
    c
}

fn conservation_fuzz() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ticks = 0u64;
    let mut violations = 0;
    let mut failures = Vec::new();
    for i in 0..1_000 {
        let config = random_config(&mut rng);
        let result = sim::run_observed(&config, |_, ledger| {
            ticks += 1;
            if ledger.total_free() + ledger.total_escrowed() + ledger.burned() != ledger.deposited()
            {
                violations += 1;
            }
        });
        if let Err(e) = result {
            failures.push(format!("run {i}: {e}"));
        }
    }
    let pass = violations == 0 && failures.is_empty();
    let mut detail = format!(
        "ledger conservation: 1000 fuzzed runs, {ticks} tick checks, {violations} violations"
    );
    if let Some(first) = failures.first() {
        detail.push_str(&format!(
            ", {} runs failed (first: {first})",
            failures.len()
        ));
    }
    check(pass, detail)
}

const DETERRENCE: &str = r#"
seed = 42
beta = 0.5
[economics]
falsification_cost = 2
error_probability = 0.5
[tasks]
count = 10000
fee = 1
solver_bond = 20
quorum_size = 3
selection = "uniform_random"
[policy]
challenger_multiplier = 0.1
[[agents]]
count = 2
roles = ["solver"]
cheat_gain = 11
balance = 1000000
[[agents]]
roles = ["solver"]
cheat_gain = 5
balance = 1000000
[[agents]]
roles = ["solver"]
solver = "always_honest"
balance = 1000000
[[agents]]
count = 5
roles = ["verifier"]
"#;

const CHALLENGERS: &str = r#"
[[agents]]
count = 2
roles = ["challenger"]
balance = 1000000
"#;

/// Whether an agent of the group would submit a wrong result, from the
/// strategy rule alone.
fn cheats(group: &AgentGroup, bond: Amount) -> bool {
    match group.solver {
        agents::SolverStrategy::AlwaysCheat => true,
        agents::SolverStrategy::AlwaysHonest => false,
        agents::SolverStrategy::Rational => {
            let prior = BigRational::from_float(group.prior).unwrap();
            int(group.cheat_gain) > prior * int(bond)
        }
    }
}

fn cheating_ids(config: &ScenarioConfig) -> BTreeSet<AgentId> {
    let mut out = BTreeSet::new();
    let mut next = 1;
    for g in &config.agents {
        for _ in 0..g.count {
            if g.roles.contains(&Role::Solver) && cheats(g, config.tasks.solver_bond.unwrap()) {
                out.insert(AgentId(next));
            }
            next += 1;
        }
    }
    out
}

fn deterrence() -> Check {
    let start = Instant::now();
    let guarded = scenario(&format!("{DETERRENCE}{CHALLENGERS}"));
    let bare = scenario(DETERRENCE);
    let falsified = economics::falsification_holds(&FalsificationParams {
        bond: 20,
        falsification_cost: 2,
        error_probability: 0.5,
    })
    .unwrap()
    .holds();
    let verifier_ok = economics::verifier_condition_holds(
        economics::verifier_exposure(50, 0, &guarded.policy.bond_policy()).unwrap(),
        2,
        &0.5,
    )
    .unwrap()
    .holds();
    let with = sim::run(&guarded).unwrap();
    let without = sim::run(&bare).unwrap();

    let cheaters = cheating_ids(&bare);
    let mut expected_cheats = 0u64;
    for r in without
        .log
        .records()
        .iter()
        .filter(|r| r.kind == RecordKind::Sim && r.op == "task")
    {
        let solver: AgentId = serde_json::from_value(r.payload["solver"].clone()).unwrap();
        if cheaters.contains(&solver) {
            expected_cheats += 1;
        }
    }
    let m = &without.metrics;
    let oracle_rate = expected_cheats as f64 / m.finalized as f64;
    let elapsed = start.elapsed();
    let pass = falsified
        && verifier_ok
        && with.metrics.tasks == 10_000
        && with.metrics.incorrect_submitted > 0
        && with.metrics.incorrect_stood == 0
        && m.finalized == 10_000
        && m.incorrect_stood == expected_cheats
        && m.incorrect_finalized_rate == oracle_rate
        && within(elapsed, 120);
    check(
        pass,
        format!(
            "deterrence: {} cheats, {} stood with challengers; without: rate {:.4} vs oracle {:.4}, {elapsed:.2?}",
            with.metrics.incorrect_submitted, with.metrics.incorrect_stood, m.incorrect_finalized_rate, oracle_rate
        ),
    )
}

const SUBSIDY: &str = r#"
seed = 9
beta = 0.5
[economics]
falsification_cost = 2
error_probability = 0.5
[tasks]
count = 300
solver_bond = 20
[policy]
challenger_multiplier = 0.1
[[agents]]
roles = ["solver"]
cheat_gain = 11
balance = 100000
[[agents]]
count = 3
roles = ["challenger"]
prior = 0.1
[[agents]]
count = 3
roles = ["verifier"]
"#;

const SUBSIDIZED: &str = r#"
[[agents]]
roles = ["challenger"]
challenger = "subsidized"
subsidy_budget = 100000
"#;

fn subsidy() -> Check {
    let base = scenario(SUBSIDY);
    let p = bondgame::AgentProfile::new(AgentId(2), [Role::Challenger], 0.1);
    let unprofitable =
        agents::challenger_decide(&p, 20, 2, 2, &0.5) == agents::ChallengerAction::Pass;
    let without = sim::run(&base).unwrap().metrics;
    let with = sim::run(&scenario(&format!("{SUBSIDY}{SUBSIDIZED}")))
        .unwrap()
        .metrics;
    let pass = unprofitable
        && without.incorrect_finalized_rate > 0.0
        && with.incorrect_finalized_rate == 0.0
        && with.incorrect_submitted > 0;
    check(
        pass,
        format!(
            "subsidized restoration: rate {:.3} without, {:.3} with one subsidized challenger",
            without.incorrect_finalized_rate, with.incorrect_finalized_rate
        ),
    )
}

const MIXED: &str = r#"
seed = 77
[tasks]
count = 120
solver_bond = 12
quorum_size = 3
max_depth = 3
selection = "uniform_random"
honest_error_rate = 0.1
visibility = 0.8
[[agents]]
count = 3
roles = ["solver", "challenger"]
cheat_gain = 7
[[agents]]
count = 2
roles = ["verifier"]
verifier = "corrupt"
[[agents]]
count = 3
roles = ["verifier"]
verifier = { lazy = 0.4 }
[[agents]]
count = 4
roles = ["verifier", "challenger"]
"#;

fn determinism_and_replay() -> Check {
    let config = scenario(MIXED);
    let a = sim::run(&config).unwrap();
    let b = sim::run(&config).unwrap();
    let bytes = a.log.to_bytes();
    let identical = bytes == b.log.to_bytes();
    let replayed = sim::replay(&bytes);
    let reproduces = replayed.as_ref().is_ok_and(|s| {
        s.ledger == a.ledger && s.metrics == a.metrics && s.ledger.balances() == a.ledger.balances()
    });

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut detected = 0;
    let flips = 50;
    for _ in 0..flips {
        let mut tampered = bytes.clone();
        let at = loop {
            let i = rng.random_range(0..tampered.len());
            if tampered[i] != b'\n' && tampered[i] ^ 1 != b'\n' {
                break i;
            }
        };
        tampered[at] ^= 1;
        let line = bytes[..at].iter().filter(|b| **b == b'\n').count();
        if sim::replay(&tampered).err().and_then(|e| e.record_index()) == Some(line) {
            detected += 1;
        }
    }
    let pass = identical && reproduces && detected == flips;
    check(
        pass,
        format!(
            "determinism and replay: identical logs {identical}, replay reproduces {reproduces}, {detected}/{flips} flips located"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("1", falsification_boundary),
        ("2", monte_carlo_agreement),
        ("3", viability_oracle),
        ("4", chain_settlement),
        ("5", conservation_fuzz),
        ("6", deterrence),
        ("7", subsidy),
        ("8", determinism_and_replay),
    ];
    let mut failed = 0;
    for (id, run) in criteria {
        let c = run();
        println!(
            "{} criterion {id}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.detail
        );
        if !c.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} of 8 criteria failed");
        std::process::exit(1);
    }
}
