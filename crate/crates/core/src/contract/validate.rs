//! Semantic checks over a parsed contract.

use std::collections::BTreeSet;

use super::types::*;
use crate::diag::Diagnostic;

/// Absolute tolerance for the weight-sum invariant.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Returns every invariant violation; an empty list means the contract is
/// valid. Pure: identical documents always yield identical lists.
pub fn validate(doc: &ContractDoc) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    check_version(doc, &mut out);
    check_model_profile(doc, &mut out);
    check_scoring(&doc.scoring, &mut out);
    check_budget(&doc.budget, &mut out);
    check_fallback(&doc.fallback, &mut out);
    check_guardrails(&doc.guardrails, &mut out);
    check_telemetry(&doc.telemetry_spec, &mut out);
    check_profiles(doc, &mut out);
    if doc.connectors.max_rounds == 0 {
        out.push(Diagnostic::error(
            "connectors.crewai.supervision.max_rounds",
            "max_rounds must be at least 1",
        ));
    }
    out
}

fn check_version(doc: &ContractDoc, out: &mut Vec<Diagnostic>) {
    let parts: Vec<&str> = doc.version.split('.').collect();
    let ok = parts.len() == 3
        && parts
            .iter()
            .all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_digit()));
    if !ok {
        out.push(Diagnostic::error(
            "version",
            format!("version \"{}\" is not a dotted numeric triple", doc.version),
        ));
    }
}

fn check_model_profile(doc: &ContractDoc, out: &mut Vec<Diagnostic>) {
    let mp = &doc.model_profile;
    let path = "prefaces.model_profile";
    if mp.tool_call_budget_max < 1 {
        out.push(Diagnostic::error(
            format!("{path}.tool_call_budget.max_calls"),
            "max_calls must be at least 1",
        ));
    }
    if mp.tool_call_budget_max > doc.budget.max_tools_cap {
        out.push(Diagnostic::error(
            format!("{path}.tool_call_budget.max_calls"),
            format!(
                "max_calls {} exceeds max_tools_cap {}",
                mp.tool_call_budget_max, doc.budget.max_tools_cap
            ),
        ));
    }
    if mp.parallel_batches < 1 {
        out.push(Diagnostic::error(
            format!("{path}.tool_call_budget.parallel_batches"),
            "parallel_batches must be at least 1",
        ));
    }
    if !(0.0..=2.0).contains(&mp.temperature) {
        out.push(Diagnostic::error(
            format!("{path}.determinism.temperature"),
            format!("temperature {} outside [0, 2]", mp.temperature),
        ));
    }
}

/// Formats a sum with two decimals unless that would hide a difference.
fn fmt_sum(x: f64) -> String {
    let two = format!("{x:.2}");
    if (two.parse::<f64>().unwrap_or(f64::NAN) - x).abs() <= WEIGHT_SUM_TOLERANCE {
        two
    } else {
        format!("{x}")
    }
}

fn check_scoring(sc: &ScoringSpec, out: &mut Vec<Diagnostic>) {
    let path = "phases.4_validation.decision_hygiene.scoring_model";
    let mut ids = BTreeSet::new();
    for c in &sc.criteria {
        if c.id.is_empty() {
            out.push(Diagnostic::error(format!("{path}.criteria"), "criterion id is empty"));
        }
        if !ids.insert(c.id.as_str()) {
            out.push(Diagnostic::error(
                format!("{path}.criteria"),
                format!("duplicate criterion \"{}\"", c.id),
            ));
        }
        if !sc.weights.contains_key(&c.id) {
            out.push(Diagnostic::error(
                format!("{path}.weights"),
                format!("criterion \"{}\" has no weight", c.id),
            ));
        }
    }
    for (id, w) in &sc.weights {
        if !ids.contains(id.as_str()) {
            out.push(Diagnostic::error(
                format!("{path}.weights.{id}"),
                format!("weight for unknown criterion \"{id}\""),
            ));
        }
        // Zero weight is reserved for gate-only criteria.
        let zero_ok = *w == 0.0 && sc.is_gated(id);
        if !(zero_ok || (*w > 0.0 && *w <= 1.0)) {
            out.push(Diagnostic::error(
                format!("{path}.weights.{id}"),
                format!("weight {w} outside (0, 1]"),
            ));
        }
    }
    let sum = sc.weight_sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        out.push(Diagnostic::error(
            format!("{path}.weights"),
            format!("weights sum {} ≠ 1.0", fmt_sum(sum)),
        ));
    }
    let mut gated = BTreeSet::new();
    for g in &sc.gates {
        if !ids.contains(g.id.as_str()) {
            out.push(Diagnostic::error(
                format!("{path}.gates"),
                format!("gate on unknown criterion \"{}\"", g.id),
            ));
        }
        if g.min_score > 5 {
            out.push(Diagnostic::error(
                format!("{path}.gates"),
                format!("gate \"{}\" min_score {} outside 0..=5", g.id, g.min_score),
            ));
        }
        if !gated.insert(g.id.as_str()) {
            out.push(Diagnostic::error(
                format!("{path}.gates"),
                format!("duplicate gate \"{}\"", g.id),
            ));
        }
    }
    let inverse = sc
        .criteria
        .iter()
        .filter(|c| c.logic == CriterionLogic::Inverse)
        .count();
    if inverse != 1 {
        out.push(Diagnostic::error(
            format!("{path}.criteria"),
            format!("expected exactly one inverse criterion, found {inverse}"),
        ));
    }
}

fn check_budget(b: &BudgetSpec, out: &mut Vec<Diagnostic>) {
    let path = "adaptive_budgeting";
    let mut err = |key: &str, msg: String| out.push(Diagnostic::error(format!("{path}.{key}"), msg));
    if b.mus_cool >= b.mus_heat {
        err("thresholds.mus_cool", "mus_cool ≥ mus_heat".into());
    }
    for (key, v) in [("thresholds.mus_heat", b.mus_heat), ("thresholds.mus_cool", b.mus_cool)] {
        if !(0.0..=100.0).contains(&v) {
            err(key, format!("{v} outside [0, 100]"));
        }
    }
    if b.guard_soft_pct >= b.guard_hard_pct {
        err("thresholds.guard_soft_pct", "guard_soft_pct ≥ guard_hard_pct".into());
    }
    for (key, v) in [("gains.tokens_up_pct", b.tokens_up_pct), ("gains.tokens_down_pct", b.tokens_down_pct)] {
        if !(v > 0.0 && v < 1.0) {
            err(key, format!("{v} outside (0, 1)"));
        }
    }
    if !(b.ema_alpha > 0.0 && b.ema_alpha <= 1.0) {
        err("smoothing.ema_alpha", format!("{} outside (0, 1]", b.ema_alpha));
    }
    if b.hysteresis_pct < 0.0 {
        err("smoothing.hysteresis_pct", "hysteresis_pct is negative".into());
    }
    if !(b.min_quality > 0.0 && b.min_quality <= 1.0) {
        err("targets.min_quality", format!("{} outside (0, 1]", b.min_quality));
    }
    if b.target_latency_ms <= 0.0 || b.target_cost_usd <= 0.0 {
        err("targets", "targets must be positive".into());
    }
    if b.max_tokens_cap == 0 || b.max_tools_cap == 0 {
        err("caps", "caps must be at least 1".into());
    }
    if b.cost_budget_tokens == 0 || b.cost_budget_tokens > b.max_tokens_cap {
        err(
            "caps.max_tokens_cap",
            format!(
                "cost_budget_tokens {} must lie in [1, max_tokens_cap {}]",
                b.cost_budget_tokens, b.max_tokens_cap
            ),
        );
    }
    if b.latency_budget_ms <= 0.0 {
        err("targets", "latency_budget_ms must be positive".into());
    }
    if let Param::Value(p) = b.price_per_token_est {
        if p < 0.0 {
            err("targets", "price_per_token_est is negative".into());
        }
    }
}

fn check_fallback(f: &FallbackSpec, out: &mut Vec<Diagnostic>) {
    let path = "fallbacks";
    let mut err = |key: &str, msg: String| out.push(Diagnostic::error(format!("{path}.{key}"), msg));
    let mut seen = BTreeSet::new();
    for (i, a) in f.action_order.iter().enumerate() {
        if let FallbackAction::Other(name) = a {
            err("actions.order", format!("unknown action \"{name}\""));
        }
        if !seen.insert(a.as_str()) {
            err("actions.order", format!("duplicate action \"{}\"", a.as_str()));
        }
        if *a == FallbackAction::Partial && i + 1 != f.action_order.len() {
            err("actions.order", "\"partial\" must be the last action".into());
        }
    }
    for (key, v) in [
        ("triggers.min_top1_sim", f.min_top1_sim),
        ("triggers.min_avg_topk_sim", f.min_avg_topk_sim),
        ("actions.rag.min_sim", f.rag_min_sim),
    ] {
        if !(-1.0..=1.0).contains(&v) {
            err(key, format!("{v} outside [-1, 1]"));
        }
    }
    if !(0.0..=1.0).contains(&f.mmr_lambda) {
        err("actions.rag.mmr_lambda", format!("{} outside [0, 1]", f.mmr_lambda));
    }
    if f.reduce_passes < 1 {
        err("actions.summary.reduce_passes", "reduce_passes must be at least 1".into());
    }
    if f.map_chunk_chars < 1 {
        err("actions.summary.map_chunk_chars", "map_chunk_chars must be at least 1".into());
    }
    if !(f.stop_when_confidence > 0.0 && f.stop_when_confidence <= 1.0) {
        err(
            "actions.partial.stop_when_confidence",
            format!("{} outside (0, 1]", f.stop_when_confidence),
        );
    }
}

fn check_guardrails(g: &GuardrailSpec, out: &mut Vec<Diagnostic>) {
    let path = "prefaces.guardrails.stop_conditions";
    for rule in &g.stop_conditions {
        if rule.kind == StopKind::CostOverrun
            && !(rule.text.contains("cost_budget_tokens") && rule.text.contains("price_per_token_est"))
        {
            out.push(Diagnostic::error(
                path,
                "cost overrun rule must reference cost_budget_tokens and price_per_token_est",
            ));
        }
    }
    if !g.has_rule(StopKind::CostOverrun) {
        out.push(Diagnostic::error(path, "no cost overrun stop condition"));
    }
}

fn check_telemetry(t: &TelemetrySpec, out: &mut Vec<Diagnostic>) {
    if !(t.span_format.contains("phase") && t.span_format.contains("action")) {
        out.push(Diagnostic::error(
            "observability_central.tracing.span_format",
            format!("span_format \"{}\" lacks a phase or action slot", t.span_format),
        ));
    }
    if !(0.0..=1.0).contains(&t.sampling_rate) {
        out.push(Diagnostic::error(
            "observability_central.privacy.sampling_rate",
            format!("{} outside [0, 1]", t.sampling_rate),
        ));
    }
    for f in &t.fields {
        if !TELEMETRY_FIELDS.contains(&f.as_str()) {
            out.push(Diagnostic::error(
                "prefaces.telemetry.fields",
                format!("unknown telemetry field \"{f}\""),
            ));
        }
    }
    for s in &t.metrics_include {
        if !METRICS_SECTIONS.contains(&s.as_str()) {
            out.push(Diagnostic::error(
                "observability_central.metrics_export.include",
                format!("unknown metrics section \"{s}\""),
            ));
        }
    }
}

fn check_profiles(doc: &ContractDoc, out: &mut Vec<Diagnostic>) {
    // Once resolved, swaps have already been applied to the criteria set.
    if doc.resolved_profile.is_some() {
        return;
    }
    for (id, p) in &doc.profiles {
        let path = format!("profiles.{id}");
        for (from, _) in &p.criterion_swaps {
            if doc.scoring.criterion(from).is_none() {
                out.push(Diagnostic::error(
                    &path,
                    format!("swap references unknown criterion \"{from}\""),
                ));
            }
        }
        for (cid, w) in &p.added_criteria {
            if doc.scoring.criterion(cid).is_some() {
                out.push(Diagnostic::error(
                    &path,
                    format!("added criterion \"{cid}\" collides with an existing criterion"),
                ));
            }
            if !(*w > 0.0 && *w < 1.0) {
                out.push(Diagnostic::error(&path, format!("added weight {w} outside (0, 1)")));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::baseline;

    fn messages(doc: &ContractDoc) -> Vec<String> {
        validate(doc).into_iter().map(|d| d.message).collect()
    }

    #[test]
    fn baseline_is_clean() {
        assert!(validate(baseline()).is_empty(), "{:?}", validate(baseline()));
    }

    #[test]
    fn weight_sum_is_named() {
        let mut doc = baseline().clone();
        doc.scoring.weights.insert("fitness".into(), 0.15);
        assert_eq!(messages(&doc), vec!["weights sum 0.90 ≠ 1.0"]);
    }

    #[test]
    fn cool_above_heat() {
        let mut doc = baseline().clone();
        doc.budget.mus_cool = 35.0;
        assert_eq!(messages(&doc), vec!["mus_cool ≥ mus_heat"]);
    }

    #[test]
    fn partial_must_be_last() {
        let mut doc = baseline().clone();
        doc.fallback.action_order.swap(2, 3);
        assert!(messages(&doc).iter().any(|m| m.contains("must be the last")));
        doc.fallback.action_order.push(FallbackAction::parse("teleport"));
        assert!(messages(&doc).iter().any(|m| m.contains("unknown action \"teleport\"")));
    }

    #[test]
    fn gate_on_unknown_criterion() {
        let mut doc = baseline().clone();
        doc.scoring.gates.push(Gate { id: "vibes".into(), min_score: 3 });
        assert!(messages(&doc).iter().any(|m| m.contains("\"vibes\"")));
    }

    #[test]
    fn tool_budget_above_cap() {
        let mut doc = baseline().clone();
        doc.model_profile.tool_call_budget_max = 9;
        assert_eq!(messages(&doc), vec!["max_calls 9 exceeds max_tools_cap 6"]);
    }

    #[test]
    fn span_format_needs_both_slots() {
        let mut doc = baseline().clone();
        doc.telemetry_spec.span_format = "phase".into();
        assert_eq!(messages(&doc).len(), 1);
    }

    #[test]
    fn version_triple() {
        let mut doc = baseline().clone();
        doc.version = "1.4".into();
        assert_eq!(messages(&doc).len(), 1);
    }

    #[test]
    fn deterministic() {
        let mut doc = baseline().clone();
        doc.budget.mus_cool = 90.0;
        doc.scoring.weights.insert("clarity".into(), 0.3);
        assert_eq!(validate(&doc), validate(&doc));
    }
}
