//! Scenario files: JSON documents describing one or more simulation runs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::{ConfigError, ScriptEntry, SimConfig, DEFAULT_MAX_STEPS};
use crate::strategy::{Action, AgentSpec, StrategyKind};
use crate::types::{AgentId, Money};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cost {
    Text(String),
    Number(f64),
}

impl Cost {
    fn as_text(&self) -> String {
        match self {
            Cost::Text(s) => s.clone(),
            Cost::Number(x) => x.to_string(),
        }
    }
}

impl Default for Cost {
    fn default() -> Self {
        Cost::Text("1/100".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n: usize,
    pub t: usize,
    #[serde(default = "one")]
    pub epsilon: Money,
    #[serde(default = "thousand")]
    pub initial_balance: Money,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Inclusive `[first, last]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_range: Option<(u64, u64)>,
    #[serde(default = "one")]
    pub d_min: u64,
    #[serde(default = "ten")]
    pub d_max: u64,
    #[serde(default)]
    pub fifo_channels: bool,
    #[serde(default)]
    pub condition3_strict: bool,
    #[serde(default)]
    pub msg_cost_c: Cost,
    /// Agents not listed are `COMPLIANT`.
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
}

fn one() -> u64 {
    1
}

fn ten() -> u64 {
    10
}

fn thousand() -> u64 {
    1000
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ConfigError),
    #[error("invalid scenario: agent {0} listed twice or out of range")]
    AgentList(AgentId),
    #[error("invalid scenario: empty seed range")]
    SeedRange,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses and validates against every configuration invariant.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        let seeds = s.seed_list()?;
        s.config(seeds[0])?.validate()?;
        Ok(s)
    }

    /// Seeds in file order: `seeds`, else `seed_range`, else `seed` (default 0).
    pub fn seed_list(&self) -> Result<Vec<u64>, ScenarioError> {
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(ScenarioError::SeedRange);
            }
            return Ok(seeds.clone());
        }
        if let Some((a, b)) = self.seed_range {
            if a > b {
                return Err(ScenarioError::SeedRange);
            }
            return Ok((a..=b).collect());
        }
        Ok(vec![self.seed.unwrap_or(0)])
    }

    pub fn config(&self, seed: u64) -> Result<SimConfig, ScenarioError> {
        let mut agents: Vec<AgentSpec> = AgentId::all(self.n)
            .map(|id| AgentSpec {
                id,
                kind: StrategyKind::Compliant,
                params: Default::default(),
            })
            .collect();
        let mut seen = vec![false; self.n];
        for a in &self.agents {
            let i = a.id.index();
            if i >= self.n || seen[i] {
                return Err(ScenarioError::AgentList(a.id));
            }
            seen[i] = true;
            agents[i] = a.clone();
        }
        let config = SimConfig {
            n: self.n,
            t: self.t,
            epsilon: self.epsilon,
            initial_balance: self.initial_balance,
            seed,
            d_min: self.d_min,
            d_max: self.d_max,
            fifo_channels: self.fifo_channels,
            condition3_strict: self.condition3_strict,
            msg_cost_c: self.msg_cost_c.as_text(),
            agents,
            script: self.script.clone(),
            max_steps: self.max_steps.unwrap_or(DEFAULT_MAX_STEPS),
        };
        config.validate()?;
        Ok(config)
    }
}

/// A reproducible random payment script: `count` payments between distinct
/// agents in `payers`, one every `spacing` ticks, amounts in `1..=max_amount`.
/// Every `convert_every`-th payment also converts fee credits.
pub fn random_payments(
    n: usize,
    payers: &[AgentId],
    count: usize,
    max_amount: Money,
    spacing: u64,
    convert_every: usize,
    seed: u64,
) -> Vec<ScriptEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let from = payers[rng.random_range(0..payers.len())];
            let mut to = AgentId(rng.random_range(0..n as u32 - 1));
            if to >= from {
                to = AgentId(to.0 + 1);
            }
            ScriptEntry {
                tick: k as u64 * spacing,
                agent: from,
                action: Action::Pay {
                    to,
                    amount: rng.random_range(1..=max_amount),
                    convert_fees: convert_every > 0 && (k + 1) % convert_every == 0,
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_agent_list() {
        let s = Scenario::parse(r#"{"n":4,"t":1,"agents":[{"id":2,"kind":"BYZ_SILENT"}]}"#).unwrap();
        let c = s.config(5).unwrap();
        assert_eq!((c.epsilon, c.initial_balance, c.d_min, c.d_max), (1, 1000, 1, 10));
        assert_eq!(c.msg_cost_c, "1/100");
        assert_eq!(c.agents[2].kind, StrategyKind::ByzSilent);
        assert_eq!(c.agents[0].kind, StrategyKind::Compliant);
        assert_eq!(c.seed, 5);
    }

    #[test]
    fn seeds_forms() {
        let one = Scenario::parse(r#"{"n":4,"t":1,"seed":9}"#).unwrap();
        assert_eq!(one.seed_list().unwrap(), vec![9]);
        let list = Scenario::parse(r#"{"n":4,"t":1,"seeds":[3,1]}"#).unwrap();
        assert_eq!(list.seed_list().unwrap(), vec![3, 1]);
        let range = Scenario::parse(r#"{"n":4,"t":1,"seed_range":[2,4]}"#).unwrap();
        assert_eq!(range.seed_list().unwrap(), vec![2, 3, 4]);
        assert!(Scenario::parse(r#"{"n":4,"t":1,"seed_range":[4,2]}"#).is_err());
    }

    #[test]
    fn invalid_files_name_the_problem() {
        let e = Scenario::parse(r#"{"n":3,"t":1}"#).unwrap_err();
        assert!(e.to_string().contains("3t < n"), "{e}");
        let e = Scenario::parse(r#"{"n":4,"t":1,"bogus":1}"#).unwrap_err();
        assert!(matches!(e, ScenarioError::Parse(_)));
        let e = Scenario::parse(r#"{"n":4,"t":1,"agents":[{"id":1,"kind":"COMPLIANT"},{"id":1,"kind":"COMPLIANT"}]}"#)
            .unwrap_err();
        assert!(matches!(e, ScenarioError::AgentList(AgentId(1))));
        let e = Scenario::parse(r#"{"n":4,"t":1,"msg_cost_c":"a/b"}"#).unwrap_err();
        assert!(e.to_string().contains("msg_cost_c"));
    }

    #[test]
    fn numeric_cost_is_accepted() {
        let s = Scenario::parse(r#"{"n":4,"t":1,"msg_cost_c":0.01}"#).unwrap();
        assert_eq!(s.config(0).unwrap().msg_cost_c, "0.01");
    }

    #[test]
    fn random_payments_are_reproducible_and_never_self() {
        let payers: Vec<_> = AgentId::all(4).collect();
        let a = random_payments(4, &payers, 50, 20, 3, 5, 1);
        assert_eq!(a, random_payments(4, &payers, 50, 20, 3, 5, 1));
        for e in &a {
            let Action::Pay { to, amount, .. } = e.action else { panic!() };
            assert_ne!(to, e.agent);
            assert!((1..=20).contains(&amount));
        }
        let converting = a.iter().filter(|e| matches!(e.action, Action::Pay { convert_fees: true, .. })).count();
        assert_eq!(converting, 10);
    }
}
