//! Guardrail decisions and review-phase adaptive actions.

use serde::{Deserialize, Serialize};

use crate::backend::ModelResponse;
use crate::budget::SpendLedger;
use crate::contract::{ContractDoc, StopKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "tool", rename_all = "snake_case")]
pub enum GuardrailDecision {
    Continue,
    StopCost,
    StopLatencyPartial,
    RequireConfirmation(String),
}

/// Run-level facts the guardrails need besides the contract and spend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuardContext {
    pub price_per_token: f64,
    pub critical: bool,
}

/// Cost first, then latency, then destructive tools. Inactive when telemetry
/// capture is off, since the limits are measured from captured fields.
pub fn check_guardrails(
    contract: &ContractDoc,
    spend: &SpendLedger,
    ctx: GuardContext,
    last_response: &ModelResponse,
    approved: &dyn Fn(&str) -> bool,
) -> GuardrailDecision {
    if !contract.telemetry_spec.capture {
        return GuardrailDecision::Continue;
    }
    let g = &contract.guardrails;
    let b = &contract.budget;
    let cost_cap = f64::from(b.cost_budget_tokens) * ctx.price_per_token;
    if g.has_rule(StopKind::CostOverrun) && spend.cost_usd > cost_cap {
        return GuardrailDecision::StopCost;
    }
    if g.has_rule(StopKind::LatencyOverrun) && !ctx.critical && spend.wall_ms > b.latency_budget_ms {
        return GuardrailDecision::StopLatencyPartial;
    }
    if g.has_rule(StopKind::DestructiveConfirmation) {
        if let Some(t) = last_response
            .tool_calls
            .iter()
            .find(|t| g.is_destructive(&t.name) && !approved(&t.name))
        {
            return GuardrailDecision::RequireConfirmation(t.name.clone());
        }
    }
    GuardrailDecision::Continue
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptiveAction {
    LowerVerbosityAndRetry,
    SkipNonCriticalTools,
    CollapseSearchPathsAndFinalize,
}

impl AdaptiveAction {
    pub const ALL: [AdaptiveAction; 3] = [
        AdaptiveAction::LowerVerbosityAndRetry,
        AdaptiveAction::SkipNonCriticalTools,
        AdaptiveAction::CollapseSearchPathsAndFinalize,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AdaptiveAction::LowerVerbosityAndRetry => "lower_verbosity_and_retry",
            AdaptiveAction::SkipNonCriticalTools => "skip_non_critical_tools",
            AdaptiveAction::CollapseSearchPathsAndFinalize => "collapse_search_paths_and_finalize",
        }
    }
}

/// Actions whose trigger holds, restricted to those the contract lists and
/// not yet fired in this run.
pub fn triggered_actions(
    contract: &ContractDoc,
    spend: &SpendLedger,
    fired: &[AdaptiveAction],
) -> Vec<AdaptiveAction> {
    let listed = |a: AdaptiveAction| {
        contract
            .phases
            .review
            .adaptive_actions
            .iter()
            .any(|r| r.action == a.as_str())
    };
    let b = &contract.budget;
    AdaptiveAction::ALL
        .into_iter()
        .filter(|&a| listed(a) && !fired.contains(&a))
        .filter(|&a| match a {
            AdaptiveAction::LowerVerbosityAndRetry => spend.tokens_used > u64::from(b.cost_budget_tokens),
            AdaptiveAction::SkipNonCriticalTools => spend.wall_ms > b.latency_budget_ms,
            AdaptiveAction::CollapseSearchPathsAndFinalize => {
                spend.tool_calls > u64::from(contract.model_profile.tool_call_budget_max)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ToolInvocation;
    use crate::contract::baseline;

    fn resp(tools: &[&str]) -> ModelResponse {
        ModelResponse {
            response_id: "r".into(),
            text: String::new(),
            structured: None,
            response_tokens: 0,
            response_cost: 0.0,
            response_time_ms: 0.0,
            uncertainty_mus: None,
            tool_calls: tools
                .iter()
                .map(|n| ToolInvocation { name: n.to_string(), arguments: serde_json::Value::Null, optional: false })
                .collect(),
        }
    }

    const CTX: GuardContext = GuardContext { price_per_token: 0.001, critical: false };

    fn check(spend: SpendLedger, ctx: GuardContext, tools: &[&str]) -> GuardrailDecision {
        check_guardrails(baseline(), &spend, ctx, &resp(tools), &|_| false)
    }

    #[test]
    fn cost_boundary() {
        let at = SpendLedger { cost_usd: 2.0, ..Default::default() };
        assert_eq!(check(at, CTX, &[]), GuardrailDecision::Continue);
        let over = SpendLedger { cost_usd: 2.5, ..Default::default() };
        assert_eq!(check(over, CTX, &[]), GuardrailDecision::StopCost);
    }

    #[test]
    fn latency_respects_criticality() {
        let s = SpendLedger { wall_ms: 70_000.0, ..Default::default() };
        assert_eq!(check(s, CTX, &[]), GuardrailDecision::StopLatencyPartial);
        let crit = GuardContext { critical: true, ..CTX };
        assert_eq!(check(s, crit, &[]), GuardrailDecision::Continue);
    }

    #[test]
    fn destructive_tools() {
        let s = SpendLedger::default();
        assert_eq!(check(s, CTX, &["search", "delete_file"]), GuardrailDecision::RequireConfirmation("delete_file".into()));
        assert_eq!(check(s, CTX, &["pay/checkout"]), GuardrailDecision::RequireConfirmation("pay/checkout".into()));
        assert_eq!(check(s, CTX, &["search"]), GuardrailDecision::Continue);
        let ok = check_guardrails(baseline(), &s, CTX, &resp(&["delete_file"]), &|t| t == "delete_file");
        assert_eq!(ok, GuardrailDecision::Continue);
    }

    #[test]
    fn adaptive_triggers() {
        let c = baseline();
        let s = SpendLedger { tokens_used: 2500, ..Default::default() };
        assert_eq!(triggered_actions(c, &s, &[]), [AdaptiveAction::LowerVerbosityAndRetry]);
        assert!(triggered_actions(c, &s, &[AdaptiveAction::LowerVerbosityAndRetry]).is_empty());
        let s = SpendLedger { tool_calls: 7, ..Default::default() };
        assert_eq!(triggered_actions(c, &s, &[]), [AdaptiveAction::CollapseSearchPathsAndFinalize]);
        assert!(triggered_actions(c, &SpendLedger::default(), &[]).is_empty());
    }
}
