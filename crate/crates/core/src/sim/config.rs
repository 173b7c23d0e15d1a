//! Scenario configuration, read from TOML.
//!
//! Every key has a default, so an empty document is a valid (if idle)
//! scenario. Keys may be written as tables or as flat dotted paths:
//!
//! ```toml
//! seed = 7
//! tasks.count = 100
//! tasks.solver_bond = 20
//! economics.falsification_cost = 2
//!
//! [[agents]]
//! count = 3
//! roles = ["solver"]
//! solver = "always_cheat"
//!
//! [[agents]]
//! roles = ["verifier"]
//! count = 5
//! verifier = { lazy = 0.2 }
//! ```
//!
//! Sweep axes name those same dotted paths:
//!
//! ```toml
//! [sweep]
//! "tasks.solver_bond" = [3, 4, 5, 6, 7, 8]
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{ChallengerStrategy, Role, SolverStrategy, VerifierStrategy};
use crate::economics::{self, BondSizingPolicy};
use crate::protocol::{ConstraintSet, SelectionPolicy};
use crate::{Amount, Real, Tick};

/// Seed used when neither the config nor the command line names one.
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(String),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Last tick the simulation executes. Processes still open then are
    /// reported as unresolved.
    pub horizon: Tick,
    /// Share of every slashed stake paid to the prevailing side; the rest
    /// is burned.
    pub beta: Real,
    pub economics: EconomicsConfig,
    pub tasks: TaskConfig,
    pub policy: PolicyConfig,
    pub agents: Vec<AgentGroup>,
    pub check_eq: CheckEqConfig,
    /// Sweep axes: dotted config path to the list of values it takes.
    pub sweep: toml::Table,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: DEFAULT_SEED,
            horizon: 1_000_000,
            beta: 0.5,
            economics: EconomicsConfig::default(),
            tasks: TaskConfig::default(),
            policy: PolicyConfig::default(),
            agents: Vec::new(),
            check_eq: CheckEqConfig::default(),
            sweep: toml::Table::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EconomicsConfig {
    /// Base cost `F` of checking a result, paid by challengers whose own
    /// `detection_cost` is unset.
    pub falsification_cost: Amount,
    /// Error probability `P_e` used to size bonds and to judge the
    /// verifier condition one level deeper.
    pub error_probability: Real,
    /// Per-level growth `gamma` of the checking cost.
    pub cost_growth: Real,
    /// Per-level discount `delta`.
    pub discount: Real,
}

impl Default for EconomicsConfig {
    fn default() -> Self {
        EconomicsConfig {
            falsification_cost: 2,
            error_probability: 0.5,
            cost_growth: 1.0,
            discount: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub count: u64,
    pub fee: Amount,
    /// Fixed solver bond. When absent the bond is the minimum satisfying
    /// the falsification condition with `bond_margin`.
    pub solver_bond: Option<Amount>,
    pub bond_margin: Real,
    /// Ticks between task arrivals.
    pub interval: Tick,
    pub challenge_window: Tick,
    pub ruling_challenge_window: Tick,
    pub quorum_size: u32,
    pub max_depth: u32,
    pub selection: SelectionPolicy,
    pub escalation_target: Option<String>,
    /// Chance that an honest solver still submits a wrong result.
    pub honest_error_rate: Real,
    /// Chance that a given challenger sees a given claim.
    pub visibility: Real,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            count: 0,
            fee: 1,
            solver_bond: None,
            bond_margin: 0.0,
            interval: 1,
            challenge_window: 3,
            ruling_challenge_window: 3,
            quorum_size: 1,
            max_depth: 2,
            selection: SelectionPolicy::FirstQualified,
            escalation_target: None,
            honest_error_rate: 0.0,
            visibility: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub challenger_multiplier: Real,
    pub verifier_floor: Amount,
    pub verifier_fraction: Real,
    pub depth_share_growth: Real,
    pub commit_window: Tick,
    pub reveal_window: Tick,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            challenger_multiplier: 0.5,
            verifier_floor: 1,
            verifier_fraction: 0.1,
            depth_share_growth: 2.0,
            commit_window: 2,
            reveal_window: 2,
        }
    }
}

impl PolicyConfig {
    pub fn bond_policy(&self) -> BondSizingPolicy<Real> {
        BondSizingPolicy {
            challenger_multiplier: self.challenger_multiplier,
            verifier_floor: self.verifier_floor,
            verifier_fraction: self.verifier_fraction,
            depth_share_growth: self.depth_share_growth,
        }
    }
}

/// `count` identical agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentGroup {
    pub count: u32,
    pub roles: BTreeSet<Role>,
    pub solver: SolverStrategy,
    pub challenger: ChallengerStrategy,
    pub verifier: VerifierStrategy<Real>,
    pub prior: Real,
    /// Defaults to `economics.falsification_cost`.
    pub detection_cost: Option<Amount>,
    pub stake: Amount,
    pub subsidy_budget: Amount,
    pub cheat_gain: Amount,
    /// Initial free balance.
    pub balance: Amount,
}

impl Default for AgentGroup {
    fn default() -> Self {
        AgentGroup {
            count: 1,
            roles: BTreeSet::new(),
            solver: SolverStrategy::Rational,
            challenger: ChallengerStrategy::Rational,
            verifier: VerifierStrategy::Rational,
            prior: 0.5,
            detection_cost: None,
            stake: 50,
            subsidy_budget: 0,
            cheat_gain: 0,
            balance: 1_000,
        }
    }
}

/// Grid and fixed terms of the analytic deviation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckEqConfig {
    pub error_probabilities: Vec<Real>,
    pub solver_bonds: Vec<Amount>,
    pub falsification_cost: Amount,
    /// Defaults to `falsification_cost`.
    pub cheat_gain: Option<Amount>,
    pub fee: Amount,
    pub challenger_bond: Amount,
    pub reward_share: Real,
    pub verifier_bond: Amount,
}

impl Default for CheckEqConfig {
    fn default() -> Self {
        CheckEqConfig {
            error_probabilities: (1..=9).map(|i| i as Real / 10.0).collect(),
            solver_bonds: (1..=40).collect(),
            falsification_cost: 2,
            cheat_gain: None,
            fee: 0,
            challenger_bond: 0,
            reward_share: 1.0,
            verifier_bond: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |field: &str, x: Real| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(invalid(field, format!("must lie in [0, 1], got {x}")))
            }
        };
        let positive = |field: &str, x: Real| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be positive, got {x}")))
            }
        };
        unit("beta", self.beta)?;
        unit(
            "economics.error_probability",
            self.economics.error_probability,
        )?;
        positive("economics.cost_growth", self.economics.cost_growth)?;
        positive("economics.discount", self.economics.discount)?;
        unit("tasks.honest_error_rate", self.tasks.honest_error_rate)?;
        unit("tasks.visibility", self.tasks.visibility)?;
        if !(self.tasks.bond_margin.is_finite() && self.tasks.bond_margin >= 0.0) {
            return Err(invalid("tasks.bond_margin", "must be non-negative"));
        }
        if self.tasks.interval == 0 {
            return Err(invalid("tasks.interval", "must be positive"));
        }
        self.constraints()
            .validate()
            .map_err(|reason| invalid("tasks", reason))?;
        self.policy
            .bond_policy()
            .validate()
            .map_err(|e| invalid("policy", e.to_string()))?;
        if self.policy.commit_window == 0 || self.policy.reveal_window == 0 {
            return Err(invalid(
                "policy",
                "commit and reveal windows must be positive",
            ));
        }
        if self.solver_bond().is_err() {
            return Err(invalid(
                "tasks.solver_bond",
                "no bond satisfies the falsification condition at P_e = 0",
            ));
        }
        if self.solver_bond() == Ok(0) {
            return Err(invalid("tasks.solver_bond", "must be positive"));
        }
        for (i, g) in self.agents.iter().enumerate() {
            let field = |name: &str| format!("agents[{i}].{name}");
            unit(&field("prior"), g.prior)?;
            if let VerifierStrategy::Lazy(p) = g.verifier {
                unit(&field("verifier.lazy"), p)?;
            }
            if g.roles.is_empty() && g.count > 0 {
                return Err(invalid(&field("roles"), "at least one role is required"));
            }
        }
        if self.tasks.count > 0 {
            for role in [Role::Solver, Role::Verifier] {
                if !self
                    .agents
                    .iter()
                    .any(|g| g.count > 0 && g.roles.contains(&role))
                {
                    return Err(invalid(
                        "agents",
                        format!("tasks need at least one {role:?} agent").to_lowercase(),
                    ));
                }
            }
        }
        unit("check_eq.reward_share", self.check_eq.reward_share)?;
        for p in &self.check_eq.error_probabilities {
            unit("check_eq.error_probabilities", *p)?;
        }
        for (axis, values) in &self.sweep {
            if !values.is_array() {
                return Err(invalid(
                    &format!("sweep.{axis}"),
                    "axis values must be a list",
                ));
            }
        }
        Ok(())
    }

    pub fn constraints(&self) -> ConstraintSet {
        ConstraintSet {
            challenge_window: self.tasks.challenge_window,
            ruling_challenge_window: self.tasks.ruling_challenge_window,
            quorum_size: self.tasks.quorum_size,
            max_recursion_depth: self.tasks.max_depth,
            solver_selection_policy: self.tasks.selection,
            escalation_target: self.tasks.escalation_target.clone(),
        }
    }

    pub fn solver_bond(&self) -> Result<Amount, economics::EconomicsError> {
        match self.tasks.solver_bond {
            Some(b) => Ok(b),
            None => economics::min_solver_bond(
                self.economics.falsification_cost,
                &self.economics.error_probability,
                &self.tasks.bond_margin,
            ),
        }
    }

    /// A copy with the dotted `path` set to `value`, revalidated.
    pub fn with_value(&self, path: &str, value: toml::Value) -> Result<Self, ConfigError> {
        let mut doc = toml::Value::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut node = &mut doc;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| invalid(path, "not a table path"))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), value.clone());
                break;
            }
            node = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
        let config: ScenarioConfig = doc
            .try_into()
            .map_err(|e: toml::de::Error| invalid(path, e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}
