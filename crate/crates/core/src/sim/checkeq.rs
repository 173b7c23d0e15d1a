//! Per-role deviation table over a grid of error probabilities and solver
//! bonds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::CheckEqConfig;
use crate::agents::{self, DeviationScenario, Role};
use crate::economics::{self, EconomicsError, FalsificationParams};
use crate::{Amount, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEqRow {
    pub role: Role,
    pub error_probability: Real,
    pub solver_bond: Amount,
    /// `B_S * P_e > F`.
    pub falsification_holds: bool,
    pub challenger_ev: Real,
    pub honest: Real,
    pub deviating: Real,
    pub equilibrium: bool,
}

pub fn scenario(
    grid: &CheckEqConfig,
    error_probability: Real,
    solver_bond: Amount,
) -> DeviationScenario<Real> {
    DeviationScenario {
        solver_bond,
        falsification_cost: grid.falsification_cost,
        error_probability,
        cheat_gain: grid.cheat_gain.unwrap_or(grid.falsification_cost),
        fee: grid.fee,
        challenger_bond: grid.challenger_bond,
        reward_share: grid.reward_share,
        verifier_bond: grid.verifier_bond,
    }
}

/// One row per `(role, P_e, B_S)`, ordered by role, then `P_e`, then `B_S`.
pub fn check_eq(grid: &CheckEqConfig) -> Result<Vec<CheckEqRow>, EconomicsError> {
    let cells: Vec<(Role, Real, Amount)> = [Role::Solver, Role::Challenger, Role::Verifier]
        .into_iter()
        .flat_map(|role| {
            grid.error_probabilities
                .iter()
                .flat_map(move |p| grid.solver_bonds.iter().map(move |b| (role, *p, *b)))
        })
        .collect();
    cells
        .into_par_iter()
        .map(|(role, p, b)| {
            let s = scenario(grid, p, b);
            let report = agents::deviation_test(role, &s)?;
            let falsification = economics::falsification_holds(&FalsificationParams {
                bond: b,
                falsification_cost: grid.falsification_cost,
                error_probability: p,
            })?;
            Ok(CheckEqRow {
                role,
                error_probability: p,
                solver_bond: b,
                falsification_holds: falsification.holds(),
                challenger_ev: economics::challenger_ev(
                    &p,
                    b,
                    grid.falsification_cost,
                    grid.challenger_bond,
                    &grid.reward_share,
                ),
                honest: report.honest,
                deviating: report.deviating,
                equilibrium: report.equilibrium,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_at_four_for_half_probability() {
        let grid = CheckEqConfig {
            error_probabilities: vec![0.5],
            solver_bonds: (3..=8).collect(),
            ..Default::default()
        };
        let rows = check_eq(&grid).unwrap();
        let solver: Vec<(Amount, bool)> = rows
            .iter()
            .filter(|r| r.role == Role::Solver)
            .map(|r| (r.solver_bond, r.equilibrium))
            .collect();
        assert_eq!(
            solver,
            vec![
                (3, false),
                (4, false),
                (5, true),
                (6, true),
                (7, true),
                (8, true)
            ]
        );
        assert_eq!(rows.len(), 18);
    }
}
