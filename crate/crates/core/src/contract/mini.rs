//! Desugaring of the mini dialect into a full contract.
//!
//! Mini phases map onto full phases 1, 2, 3, 4 and 6; review and changelog
//! come from the canonical contract, as do scoring and budgeting.

use serde_yaml::Value;

use super::parse::{parse_yaml, split_root, ParseFailure, Parsed};
use super::reader::{as_f64, as_text, string_list, Ctx, Obj};
use super::types::*;
use super::{baseline, ContractError};
use crate::diag::{has_errors, Diagnostic};

#[derive(Debug, Clone, PartialEq, Default)]
struct ModeSpec {
    reasoning_effort: Level,
    verbosity: Level,
    max_calls: u32,
    stop_when_confidence: f64,
}

/// Desugars a mini contract; fails on parse errors or an undefined mode.
pub fn desugar_mini(source_text: &str) -> Result<ContractDoc, ContractError> {
    match desugar_inner(source_text) {
        Ok(parsed) => Ok(parsed.doc),
        Err(MiniError::UnknownMode(m)) => Err(ContractError::UnknownMode(m)),
        Err(MiniError::Parse(f)) => Err(ContractError::Diagnostics(f.diagnostics)),
    }
}

pub(crate) fn desugar_with_diagnostics(source_text: &str) -> Result<Parsed, ParseFailure> {
    desugar_inner(source_text).map_err(|e| match e {
        MiniError::Parse(f) => f,
        MiniError::UnknownMode(m) => ParseFailure {
            diagnostics: vec![Diagnostic::error(
                "inputs.preferences.mode",
                format!("unknown mode \"{m}\""),
            )],
        },
    })
}

enum MiniError {
    Parse(ParseFailure),
    UnknownMode(String),
}

fn normalize_version(v: &str) -> String {
    let mut parts: Vec<&str> = v.split('.').collect();
    while parts.len() < 3 {
        parts.push("0");
    }
    parts.join(".")
}

fn desugar_inner(source_text: &str) -> Result<Parsed, MiniError> {
    let value = parse_yaml(source_text).map_err(MiniError::Parse)?;
    let ctx = Ctx::new(true);
    let (_, body) = split_root(&value, &ctx);
    let empty = Value::Mapping(Default::default());
    let body = match body {
        Some(Value::Null) | None => &empty,
        Some(b) => b,
    };

    let mut doc = baseline().clone();
    let mut unknown_mode = None;
    if let Some(obj) = Obj::new(body, "", &ctx) {
        unknown_mode = fill(&obj, &mut doc);
    }
    let diagnostics = ctx.into_diags();
    if has_errors(&diagnostics) {
        return Err(MiniError::Parse(ParseFailure { diagnostics }));
    }
    if let Some(m) = unknown_mode {
        return Err(MiniError::UnknownMode(m));
    }
    Ok(Parsed { doc, diagnostics })
}

/// Returns the selected mode name when it is not defined under `modes`.
fn fill(obj: &Obj<'_>, doc: &mut ContractDoc) -> Option<String> {
    let mut version = String::new();
    obj.set_string("version", &mut version);
    doc.version = normalize_version(&version);
    doc.root_key = format!("PARCER_v{}", doc.version.replace('.', "_"));
    doc.rationale = obj.opt_string("purpose");

    let mut modes = Vec::new();
    if let Some(m) = obj.block("modes") {
        for (name, v) in m.entries() {
            if let Some(o) = Obj::new(v, m.at(&name), m.ctx) {
                modes.push((name, parse_mode(&o)));
            }
        }
    }
    if let Some(g) = obj.raw("guardrails") {
        doc.guardrails.safety_policies = string_list(g, "guardrails", obj.ctx).unwrap_or_default();
    }

    let mut selected = String::new();
    if let Some(inputs) = obj.block("inputs") {
        if let Some(meta) = inputs.obj("meta") {
            meta.set_string("title", &mut doc.meta.title);
            meta.set_string("owner", &mut doc.meta.owner);
            meta.set_string("date", &mut doc.meta.date);
            meta.set_strings("tags", &mut doc.meta.tags);
        }
        inputs.set_string("context", &mut doc.io.context_input);
        doc.io.goal = inputs.opt_string("goal");
        doc.scope.topic_domain = doc.meta.title.clone();
        doc.scope.success_criteria = doc.io.goal.iter().cloned().collect();
        doc.scope.assumptions.clear();
        doc.scope.constraints.clear();
        if inputs.has("constraints") {
            inputs.set_strings("constraints", &mut doc.scope.constraints);
        }
        if let Some(p) = inputs.block("preferences") {
            p.set_string("mode", &mut selected);
            if p.has("use_web") {
                p.set_bool("use_web", &mut doc.switches.use_web_search);
            }
            if p.has("max_tokens") {
                p.set_count("max_tokens", &mut doc.budget.cost_budget_tokens);
                if doc.budget.cost_budget_tokens == 0 {
                    p.ctx.error(&p.at("max_tokens"), "max_tokens must be at least 1");
                }
            }
        }
    }

    if let Some(ph) = obj.block("phases") {
        let plan = &mut doc.phases;
        let steps = |key: &str, field: &str, target: &mut Vec<String>| {
            if let Some(o) = ph.block(key) {
                o.set_strings(field, target);
            }
        };
        steps("analysis", "steps", &mut plan.analysis_steps);
        steps("plan", "steps", &mut plan.plan_steps);
        steps("execution", "rules", &mut plan.execution_rules);
        steps("validation", "checks", &mut plan.validation.checks);
        steps("handoff", "deliverables", &mut plan.handoff_deliverables);
        plan.code_editing_rules = None;
        plan.zero_to_one_booster = None;
    }
    doc.scoring.checklist = derive_checklist(&doc.phases.validation.checks);

    if let Some(out) = obj.obj("outputs") {
        if let Some(s) = out.obj("structured") {
            s.set_string("type", &mut doc.io.structured_type);
            doc.io.structured_include.clear();
            if s.has("include") {
                s.set_strings("include", &mut doc.io.structured_include);
            }
        }
    }
    if let Some(p) = obj.obj("profiles") {
        for (name, v) in p.entries() {
            let Ok(id) = name.parse::<ProfileId>() else {
                p.ctx.error(&p.at(&name), format!("unknown profile \"{name}\""));
                continue;
            };
            let Some(o) = Obj::new(v, p.at(&name), p.ctx) else { continue };
            let spec = doc.profiles.entry(id).or_default();
            if o.has("default_mode") {
                o.set_string("default_mode", &mut spec.default_mode);
            }
            if o.has("use_web") {
                o.set_bool("use_web", &mut spec.use_web);
            }
        }
    }

    let Some((_, mode)) = modes.iter().find(|(n, _)| *n == selected) else {
        return Some(selected);
    };
    let mp = &mut doc.model_profile;
    mp.reasoning_effort = mode.reasoning_effort;
    mp.verbosity_default = mode.verbosity;
    mp.tool_call_budget_max = mode.max_calls;
    doc.fallback.stop_when_confidence = mode.stop_when_confidence;
    // Injected caps widen to cover what the document asks for.
    let b = &mut doc.budget;
    b.max_tokens_cap = b.max_tokens_cap.max(b.cost_budget_tokens);
    b.max_tools_cap = b.max_tools_cap.max(modes.iter().map(|(_, m)| m.max_calls).max().unwrap_or(0));
    None
}

fn parse_mode(o: &Obj<'_>) -> ModeSpec {
    let mut m = ModeSpec::default();
    o.set_parsed("reasoning_effort", &mut m.reasoning_effort);
    o.set_parsed("verbosity", &mut m.verbosity);
    if let Some(t) = o.block("tool_call_budget") {
        t.set_count("max_calls", &mut m.max_calls);
    }
    match o.raw("stop_when_confidence") {
        Some(v) => match as_f64(v).or_else(|| as_text(v).and_then(|s| s.parse().ok())) {
            Some(x) => m.stop_when_confidence = x,
            None => o.ctx.error(&o.at("stop_when_confidence"), "expected a number"),
        },
        None => o.ctx.missing(&o.at("stop_when_confidence"), "key"),
    }
    m
}

fn derive_checklist(checks: &[String]) -> ChecklistParams {
    let mut params = baseline().scoring.checklist.clone();
    let re = regex::Regex::new(r"<=\s*(\d+)").expect("static regex");
    for c in checks {
        if c.to_lowercase().contains("uncertaint") {
            if let Some(n) = re.captures(c).and_then(|cap| cap[1].parse().ok()) {
                params.max_uncertainty_items = n;
            }
        }
    }
    params
}
