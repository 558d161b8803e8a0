//! Data-only graph description of the phase pipeline for external
//! orchestrators.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::types::{ContractDoc, RuntimePolicies};
use crate::phase::Phase;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub kind: String,
    pub action_contract: Vec<String>,
    pub budget: Value,
    pub policies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
    pub condition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphContract {
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<EdgeSpec>,
    pub runtime_policies: RuntimePoliciesOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimePoliciesOut {
    pub max_steps: u32,
    pub retry: u32,
    pub backoff: String,
    pub parallel_branches: u32,
}

impl From<&RuntimePolicies> for RuntimePoliciesOut {
    fn from(r: &RuntimePolicies) -> Self {
        Self {
            max_steps: r.max_steps,
            retry: r.retry,
            backoff: r.backoff.clone(),
            parallel_branches: r.parallel_branches,
        }
    }
}

impl GraphContract {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph contract serializes")
    }
}

const EDGES: [(Phase, Phase, &str); 7] = [
    (Phase::Analysis, Phase::Plan, "validator_pass"),
    (Phase::Plan, Phase::Execution, "budget_remaining"),
    (Phase::Execution, Phase::Validation, "budget_remaining"),
    (Phase::Validation, Phase::Review, "quality"),
    (Phase::Validation, Phase::Plan, "gates"),
    (Phase::Review, Phase::Handoff, "validator_pass"),
    (Phase::Handoff, Phase::Changelog, "validator_pass"),
];

fn action_contract(doc: &ContractDoc, phase: Phase) -> Vec<String> {
    let p = &doc.phases;
    match phase {
        Phase::Analysis => p.analysis_steps.clone(),
        Phase::Plan => p.plan_steps.clone(),
        Phase::Execution => p.execution_rules.clone(),
        Phase::Validation => {
            let mut out: Vec<String> = p
                .validation
                .procedures
                .iter()
                .map(|pr| format!("{}: {}", pr.id, pr.goal))
                .collect();
            out.extend(p.validation.checks.iter().cloned());
            out
        }
        Phase::Review => p
            .review
            .adaptive_actions
            .iter()
            .map(|a| format!("{} => {}", a.when, a.action))
            .collect(),
        Phase::Handoff => p.handoff_deliverables.clone(),
        Phase::Changelog => vec![p.changelog_format.clone()],
    }
}

/// Emits one node per phase and the transition edges, including the
/// validation-to-plan revise loop.
pub fn compile_graph_contract(doc: &ContractDoc) -> GraphContract {
    let nodes = Phase::ALL
        .iter()
        .map(|&phase| {
            let budget = if phase.adjusts_budget() {
                json!({
                    "tokens": doc.budget.cost_budget_tokens,
                    "tools": doc.model_profile.tool_call_budget_max,
                    "latency_ms": doc.budget.latency_budget_ms,
                })
            } else {
                Value::Null
            };
            let mut policies = Vec::new();
            if phase == Phase::Validation {
                policies.extend(doc.scoring.gates.iter().map(|g| format!("gate:{}>={}", g.id, g.min_score)));
                policies.push(format!("max_rounds:{}", doc.connectors.max_rounds));
            }
            if phase == Phase::Execution {
                policies.push(format!("eagerness:{}", doc.eagerness().as_str()));
            }
            NodeSpec {
                id: phase.key().to_string(),
                kind: "phase".to_string(),
                action_contract: action_contract(doc, phase),
                budget,
                policies,
            }
        })
        .collect();
    let edges = EDGES
        .iter()
        .map(|(from, to, cond)| EdgeSpec {
            from: from.key().to_string(),
            to: to.key().to_string(),
            condition: cond.to_string(),
        })
        .collect();
    GraphContract {
        nodes,
        edges,
        runtime_policies: (&doc.connectors.runtime).into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::baseline;

    #[test]
    fn baseline_graph() {
        let g = compile_graph_contract(baseline());
        assert_eq!(g.nodes.len(), 7);
        assert!(g.edges.iter().any(|e| e.from == "4_validation" && e.to == "2_plan" && e.condition == "gates"));
        let v: Value = serde_json::from_str(&g.to_json()).unwrap();
        let keys: Vec<&String> = v["edges"][0].as_object().unwrap().keys().collect();
        assert_eq!(keys, ["condition", "from", "to"]);
        let node_keys: Vec<&String> = v["nodes"][0].as_object().unwrap().keys().collect();
        assert_eq!(node_keys, ["action_contract", "budget", "id", "kind", "policies"]);
        assert_eq!(v["runtime_policies"], json!({"max_steps": 50, "retry": 1, "backoff": "exp", "parallel_branches": 2}));
    }

    #[test]
    fn disabled_connectors_still_emit() {
        let mut doc = baseline().clone();
        doc.connectors.graph_enabled = false;
        assert_eq!(compile_graph_contract(&doc).nodes.len(), 7);
    }
}
