use std::collections::BTreeMap;

use regex::Regex;
use serde_yaml::Value;

use super::reader::{as_f64, as_text, join, string_list, Ctx, Obj};
use super::types::*;
use crate::diag::{has_errors, Diagnostic, Severity};

/// Which root the source document used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dialect {
    Full,
    Mini,
}

/// A successfully parsed contract plus non-fatal diagnostics.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub doc: ContractDoc,
    pub diagnostics: Vec<Diagnostic>,
}

impl Parsed {
    pub fn warnings(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics
            .iter()
            .filter(|d| d.severity == Severity::Warning)
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("{}", .diagnostics.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"))]
pub struct ParseFailure {
    pub diagnostics: Vec<Diagnostic>,
}

impl ParseFailure {
    fn single(d: Diagnostic) -> Self {
        Self {
            diagnostics: vec![d],
        }
    }
}

pub(crate) fn parse_yaml(text: &str) -> Result<Value, ParseFailure> {
    serde_yaml::from_str::<Value>(text).map_err(|e| {
        let (line, column) = e
            .location()
            .map(|l| (l.line(), l.column()))
            .unwrap_or((0, 0));
        ParseFailure::single(Diagnostic::fatal(
            format!("line {line}, column {column}"),
            format!("syntax error at line {line}, column {column}: {e}"),
        ))
    })
}

/// Splits the document into its `PARCER_*` root key and body.
pub(crate) fn split_root<'a>(value: &'a Value, ctx: &Ctx) -> (Option<String>, Option<&'a Value>) {
    let Value::Mapping(map) = value else {
        return (None, None);
    };
    let mut root = None;
    for (k, v) in map {
        let key = super::reader::key_string(k);
        if key.starts_with("PARCER_") && root.is_none() {
            root = Some((key, v));
        } else {
            ctx.warn(&key, format!("unknown key \"{key}\""));
        }
    }
    match root {
        Some((k, v)) => (Some(k), Some(v)),
        None => (None, Some(value)),
    }
}

pub(crate) fn detect_dialect(text: &str) -> Result<Dialect, ParseFailure> {
    let value = parse_yaml(text)?;
    if let Value::Mapping(map) = &value {
        for (k, _) in map {
            if super::reader::key_string(k).starts_with("PARCER_mini") {
                return Ok(Dialect::Mini);
            }
        }
    }
    Ok(Dialect::Full)
}

/// Parses the full dialect, filling missing non-mandatory blocks from the
/// canonical contract.
pub fn parse_contract(source_text: &str) -> Result<Parsed, ParseFailure> {
    parse_with_base(source_text, Some(super::baseline()))
}

/// Parses without any defaults; used for the canonical contract itself.
pub(crate) fn parse_strict(source_text: &str) -> Result<Parsed, ParseFailure> {
    parse_with_base(source_text, None)
}

/// Parses either dialect, desugaring mini contracts into the full form.
pub fn load_contract(source_text: &str) -> Result<(Dialect, Parsed), ParseFailure> {
    match detect_dialect(source_text)? {
        Dialect::Full => parse_contract(source_text).map(|p| (Dialect::Full, p)),
        Dialect::Mini => super::mini::desugar_with_diagnostics(source_text).map(|p| (Dialect::Mini, p)),
    }
}

fn parse_with_base(source_text: &str, base: Option<&ContractDoc>) -> Result<Parsed, ParseFailure> {
    let value = parse_yaml(source_text)?;
    let ctx = Ctx::new(base.is_none());
    let (root_key, body) = split_root(&value, &ctx);
    let empty = Value::Mapping(Default::default());
    let body = match body {
        Some(Value::Null) | None => &empty,
        Some(b) => b,
    };

    let mut doc = base.cloned().unwrap_or_default();
    doc.resolved_profile = None;
    let fatal = {
        let Some(obj) = Obj::new(body, "", &ctx) else {
            return Err(ParseFailure {
                diagnostics: ctx.into_diags(),
            });
        };
        let fatal = parse_body(&obj, &mut doc);
        drop(obj);
        fatal
    };
    doc.root_key = root_key.unwrap_or_else(|| format!("PARCER_v{}", doc.version.replace('.', "_")));

    let mut diagnostics = ctx.into_diags();
    if let Some(f) = fatal {
        diagnostics.insert(0, f);
    }
    if has_errors(&diagnostics) {
        return Err(ParseFailure { diagnostics });
    }
    Ok(Parsed { doc, diagnostics })
}

/// Returns a fatal diagnostic when a mandatory block is missing.
fn parse_body(obj: &Obj<'_>, doc: &mut ContractDoc) -> Option<Diagnostic> {
    if !obj.has("phases") {
        obj.raw("phases");
        return Some(Diagnostic::fatal("phases", "missing block: phases"));
    }

    obj.set_string("version", &mut doc.version);
    doc.rationale = obj.opt_string("rationale");
    if let Some(m) = obj.block("meta") {
        parse_meta(&m, &mut doc.meta);
    }
    if let Some(p) = obj.block("prefaces") {
        parse_prefaces(&p, doc);
    }
    if let Some(s) = obj.block("scope") {
        s.set_string("topic_domain", &mut doc.scope.topic_domain);
        s.set_strings("success_criteria", &mut doc.scope.success_criteria);
        s.set_strings("constraints", &mut doc.scope.constraints);
        s.set_strings("assumptions", &mut doc.scope.assumptions);
    }

    let mut phase_profiles = BTreeMap::new();
    let Some(phases) = obj.obj("phases") else {
        return Some(Diagnostic::fatal("phases", "missing block: phases"));
    };
    let fatal = parse_phases(&phases, doc, &mut phase_profiles);
    drop(phases);
    if fatal.is_some() {
        return fatal;
    }

    if let Some(b) = obj.block("adaptive_budgeting") {
        parse_budget(&b, &mut doc.budget);
    }
    if let Some(f) = obj.block("fallbacks") {
        parse_fallbacks(&f, &mut doc.fallback);
    }
    if let Some(c) = obj.block("connectors") {
        parse_connectors(&c, &mut doc.connectors);
    }
    if let Some(o) = obj.block("observability_central") {
        parse_observability(&o, &mut doc.telemetry_spec);
    }
    if let Some(s) = obj.block("switches") {
        let sw = &mut doc.switches;
        s.set_parsed("agentic_mode", &mut sw.agentic_mode);
        s.set_bool("use_web_search", &mut sw.use_web_search);
        s.set_bool("allow_partial_completion", &mut sw.allow_partial_completion);
        s.set_string("produce_citations", &mut sw.produce_citations);
        s.set_bool("produce_review_export", &mut sw.produce_review_export);
    }
    match obj.obj("profiles") {
        Some(p) => doc.profiles = parse_profiles(&p),
        None => {
            if !obj.has("profiles") {
                obj.ctx.missing("profiles", "block");
            }
        }
    }
    merge_phase_profiles(&mut doc.profiles, phase_profiles, obj.ctx);

    if let Some(i) = obj.block("inputs") {
        parse_inputs(&i, &mut doc.io);
    }
    if let Some(o) = obj.block("outputs") {
        parse_outputs(&o, &mut doc.io);
    }
    if let Some(s) = obj.obj("snippets") {
        doc.snippets = parse_snippets(&s);
    }
    if let Some(p) = obj.opt_string("resolved_profile") {
        match p.parse::<ProfileId>() {
            Ok(id) => doc.resolved_profile = Some(id),
            Err(_) => obj.ctx.error("resolved_profile", format!("unknown profile \"{p}\"")),
        }
    }
    None
}

fn parse_meta(m: &Obj<'_>, meta: &mut MetaBlock) {
    m.set_string("title", &mut meta.title);
    m.set_string("owner", &mut meta.owner);
    m.set_string("date", &mut meta.date);
    m.set_strings("tags", &mut meta.tags);
}

fn parse_prefaces(p: &Obj<'_>, doc: &mut ContractDoc) {
    if let Some(mp) = p.block("model_profile") {
        let prof = &mut doc.model_profile;
        mp.set_string("model_family", &mut prof.model_family);
        mp.set_parsed("reasoning_effort", &mut prof.reasoning_effort);
        if let Some(v) = mp.block("verbosity") {
            v.set_parsed("default", &mut prof.verbosity_default);
            v.set_parsed("code_blocks", &mut prof.verbosity_code_blocks);
        }
        mp.set_parsed("eagerness_mode", &mut prof.eagerness_mode);
        if let Some(t) = mp.block("tool_call_budget") {
            t.set_count("max_calls", &mut prof.tool_call_budget_max);
            t.set_count("parallel_batches", &mut prof.parallel_batches);
        }
        if let Some(d) = mp.block("determinism") {
            match d.raw("seed") {
                Some(Value::Null) | None => prof.seed = None,
                Some(Value::Number(n)) if n.as_i64().is_some() => prof.seed = n.as_i64(),
                Some(_) => d.ctx.error(&d.at("seed"), "expected an integer or null"),
            }
            d.set_f64("temperature", &mut prof.temperature);
        }
    }
    if let Some(t) = p.block("telemetry") {
        t.set_bool("capture", &mut doc.telemetry_spec.capture);
        t.set_strings("fields", &mut doc.telemetry_spec.fields);
        t.set_count("cost_budget_tokens", &mut doc.budget.cost_budget_tokens);
        t.set_f64("latency_budget_ms", &mut doc.budget.latency_budget_ms);
        match t.raw("price_per_token_est") {
            None => t.ctx.missing(&t.at("price_per_token_est"), "key"),
            Some(v) => match (as_f64(v), as_text(v)) {
                (Some(x), _) => doc.budget.price_per_token_est = Param::Value(x),
                (None, Some(s)) => {
                    doc.budget.price_per_token_est = match s.trim().parse::<f64>() {
                        Ok(x) => Param::Value(x),
                        Err(_) => Param::Slot(s),
                    }
                }
                _ => t.ctx.error(&t.at("price_per_token_est"), "expected a number or slot"),
            },
        }
    }
    if let Some(m) = p.block("memory_reuse") {
        m.set_parsed("strategy", &mut doc.memory_spec.strategy);
        doc.memory_spec.previous_response_id = m.opt_string("previous_response_id");
        m.set_string("traceability", &mut doc.memory_spec.traceability);
    }
    if let Some(g) = p.block("guardrails") {
        parse_guardrails(&g, &mut doc.guardrails);
    }
    if let Some(v) = p.raw("agentic_preambles") {
        doc.phases.preambles = parse_preambles(v, &p.at("agentic_preambles"), p.ctx);
    } else {
        p.ctx.missing(&p.at("agentic_preambles"), "key");
    }
    if let Some(m) = p.block("agentic_modes") {
        m.set_string("low_eagerness", &mut doc.phases.agentic_modes.low_eagerness);
        m.set_string("high_eagerness", &mut doc.phases.agentic_modes.high_eagerness);
    }
}

fn parse_guardrails(g: &Obj<'_>, spec: &mut GuardrailSpec) {
    let mut texts = Vec::new();
    g.set_strings("stop_conditions", &mut texts);
    if g.has("stop_conditions") {
        spec.stop_conditions = texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let rule = StopRule::classify(t);
                if rule.kind == StopKind::Unrecognized {
                    g.ctx.warn(
                        &format!("{}[{i}]", g.at("stop_conditions")),
                        "unrecognized stop condition; kept as text only",
                    );
                }
                rule
            })
            .collect();
    }
    if let Some(u) = g.block("uncertainty_thresholds") {
        u.set_parsed("default", &mut spec.uncertainty_default);
        if let Some(tools) = u.obj("tools") {
            spec.uncertainty_tools.clear();
            for (name, v) in tools.entries() {
                match as_text(v).map(|s| s.parse::<Level>()) {
                    Some(Ok(level)) => {
                        spec.uncertainty_tools.insert(name, level);
                    }
                    Some(Err(e)) => tools.ctx.error(&tools.at(&name), e),
                    None => tools.ctx.error(&tools.at(&name), "expected a level"),
                }
            }
        }
    }
    g.set_strings("safety_policy", &mut spec.safety_policies);
}

fn parse_preambles(v: &Value, path: &str, ctx: &Ctx) -> Vec<Preamble> {
    let Value::Sequence(items) = v else {
        ctx.error(path, "expected a list");
        return Vec::new();
    };
    items
        .iter()
        .enumerate()
        .filter_map(|(i, item)| {
            let o = Obj::new(item, format!("{path}[{i}]"), ctx)?;
            let mut p = Preamble::default();
            o.set_string("name", &mut p.name);
            o.set_string("content", &mut p.content);
            Some(p)
        })
        .collect()
}

type PhaseProfiles = BTreeMap<String, ProfileSpec>;

fn parse_phases(ph: &Obj<'_>, doc: &mut ContractDoc, profiles: &mut PhaseProfiles) -> Option<Diagnostic> {
    let plan = &mut doc.phases;
    if let Some(a) = ph.block("1_analysis") {
        a.set_strings("steps", &mut plan.analysis_steps);
    }
    if let Some(p) = ph.block("2_plan") {
        p.set_strings("steps", &mut plan.plan_steps);
    }
    if let Some(e) = ph.block("3_execution") {
        e.set_strings("rules", &mut plan.execution_rules);
        plan.code_editing_rules = e.opt_string("code_editing_rules");
        plan.zero_to_one_booster = e.opt_string("zero_to_one_booster");
    }
    let validation = ph.obj("4_validation");
    let mut scoring_found = false;
    if let Some(v) = &validation {
        scoring_found = parse_validation(v, &mut plan.validation, &mut doc.scoring, profiles);
    }
    if !scoring_found {
        return Some(Diagnostic::fatal(
            join(&ph.path, "4_validation.decision_hygiene.scoring_model"),
            "missing block: scoring",
        ));
    }
    if let Some(r) = ph.block("5_review") {
        parse_review(&r, &mut plan.review);
    }
    if let Some(h) = ph.block("6_handoff") {
        h.set_strings("deliverables", &mut plan.handoff_deliverables);
    }
    if let Some(c) = ph.block("7_changelog") {
        c.set_string("format", &mut plan.changelog_format);
    }
    None
}

/// Returns whether a scoring model was present.
fn parse_validation(
    v: &Obj<'_>,
    plan: &mut ValidationPlan,
    scoring: &mut ScoringSpec,
    profiles: &mut PhaseProfiles,
) -> bool {
    if let Some(a) = v.block("artifacts") {
        for (key, target) in [
            ("evidence_docket", &mut plan.evidence_fields),
            ("assumptions_register", &mut plan.assumption_fields),
            ("derivation_trace", &mut plan.derivation_fields),
        ] {
            if let Some(o) = a.block(key) {
                o.set_strings("fields", target);
            }
        }
    }
    if v.has("checks") {
        v.set_strings("checks", &mut plan.checks);
    }
    let mut found = false;
    if let Some(dh) = v.obj("decision_hygiene") {
        if let Some(procs) = dh.raw("procedures") {
            plan.procedures = parse_procedures(procs, &dh.at("procedures"), dh.ctx);
        }
        if let Some(sm) = dh.obj("scoring_model") {
            found = true;
            parse_scoring_model(&sm, scoring);
        }
        if let Some(me) = dh.block("metrics_export") {
            me.set_strings("fields", &mut scoring.metrics_fields);
        }
    }
    scoring.checklist = checklist_from_procedures(&plan.procedures, &plan.checks);
    if let Some(p) = v.obj("profiles") {
        for (name, value) in p.entries() {
            let Some(o) = Obj::new(value, p.at(&name), p.ctx) else {
                continue;
            };
            let spec = profiles.entry(name).or_default();
            if o.has("extras") {
                o.set_strings("extras", &mut spec.notes);
            }
            if let Some(r) = o.raw("replacements") {
                for s in string_list(r, &o.at("replacements"), o.ctx).unwrap_or_default() {
                    match parse_swap(&s) {
                        Some(swap) => spec.criterion_swaps.push(swap),
                        None => o.ctx.error(&o.at("replacements"), format!("malformed swap \"{s}\"")),
                    }
                }
            }
            if let Some(g) = o.raw("gates_extra") {
                spec.extra_gates.extend(parse_gates(g, &o.at("gates_extra"), o.ctx));
            }
        }
    }
    found
}

fn parse_procedures(v: &Value, path: &str, ctx: &Ctx) -> Vec<Procedure> {
    let Value::Sequence(items) = v else {
        ctx.error(path, "expected a list");
        return Vec::new();
    };
    items
        .iter()
        .enumerate()
        .filter_map(|(i, item)| {
            let o = Obj::new(item, format!("{path}[{i}]"), ctx)?;
            let mut p = Procedure::default();
            o.set_string("id", &mut p.id);
            o.set_string("goal", &mut p.goal);
            if o.has("checks") {
                o.set_strings("checks", &mut p.checks);
            }
            Some(p)
        })
        .collect()
}

/// Reads counterfactual/probe/uncertainty counts out of the procedure texts,
/// keeping the defaults where the text gives no number.
fn checklist_from_procedures(procs: &[Procedure], checks: &[String]) -> ChecklistParams {
    let mut params = ChecklistParams::default();
    let first_number = |re: &str, text: &str| -> Option<usize> {
        Regex::new(re)
            .ok()?
            .captures(text)?
            .get(1)?
            .as_str()
            .parse()
            .ok()
    };
    for p in procs {
        let id = p.id.to_lowercase();
        if id.contains("counterfactual") {
            if let Some(n) = first_number(r"(\d+)(?:\s*-\s*\d+)?\s+minimum", &p.goal) {
                params.min_counterfactuals = n;
            }
        } else if id.contains("adversarial") {
            if let Some(n) = first_number(r"(\d+)\s+adversarial", &p.goal) {
                params.adversarial_probes = n;
            }
        }
    }
    for c in checks {
        if c.to_lowercase().contains("uncertaint") {
            if let Some(n) = first_number(r"<=\s*(\d+)", c) {
                params.max_uncertainty_items = n;
            }
        }
    }
    params
}

fn parse_scoring_model(sm: &Obj<'_>, scoring: &mut ScoringSpec) {
    scoring.criteria.clear();
    match sm.raw("criteria") {
        Some(Value::Sequence(items)) => {
            for (i, item) in items.iter().enumerate() {
                let Some(o) = Obj::new(item, format!("{}[{i}]", sm.at("criteria")), sm.ctx) else {
                    continue;
                };
                let mut id = String::new();
                let mut logic = CriterionLogic::Direct;
                o.set_string("id", &mut id);
                o.set_parsed("logic", &mut logic);
                scoring.criteria.push(Criterion { id, logic });
            }
        }
        Some(_) => sm.ctx.error(&sm.at("criteria"), "expected a list"),
        None => sm.ctx.error(&sm.at("criteria"), "missing key"),
    }
    scoring.weights.clear();
    match sm.raw("weights") {
        Some(Value::Mapping(map)) => {
            for (k, v) in map {
                let key = super::reader::key_string(k);
                let path = sm.at("weights");
                match (v, as_f64(v)) {
                    (_, Some(w)) => insert_weight(scoring, key, w, &path, sm.ctx),
                    // `{fitness:0.25}` without a space reads as a bare key.
                    (Value::Null, None) => match key.rsplit_once(':') {
                        Some((id, w)) => match w.trim().parse::<f64>() {
                            Ok(w) => insert_weight(scoring, id.trim().to_string(), w, &path, sm.ctx),
                            Err(_) => sm.ctx.error(&path, format!("malformed weight \"{key}\"")),
                        },
                        None => sm.ctx.error(&join(&path, &key), "missing weight value"),
                    },
                    _ => sm.ctx.error(&join(&path, &key), "expected a number"),
                }
            }
        }
        Some(_) => sm.ctx.error(&sm.at("weights"), "expected a mapping"),
        None => sm.ctx.error(&sm.at("weights"), "missing key"),
    }
    scoring.gates = match sm.raw("gates") {
        Some(v) => parse_gates(v, &sm.at("gates"), sm.ctx),
        None => Vec::new(),
    };
}

fn insert_weight(scoring: &mut ScoringSpec, id: String, w: f64, path: &str, ctx: &Ctx) {
    if scoring.weights.insert(id.clone(), w).is_some() {
        ctx.error(path, format!("duplicate weight for \"{id}\""));
    }
}

pub(crate) fn parse_gates(v: &Value, path: &str, ctx: &Ctx) -> Vec<Gate> {
    let Value::Sequence(items) = v else {
        if !v.is_null() {
            ctx.error(path, "expected a list");
        }
        return Vec::new();
    };
    let mut out = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let Some(o) = Obj::new(item, format!("{path}[{i}]"), ctx) else {
            continue;
        };
        let mut id = String::new();
        let mut min_score = 0u8;
        o.set_string("id", &mut id);
        o.set_count("min_score", &mut min_score);
        out.push(Gate { id, min_score });
    }
    out
}

fn parse_swap(s: &str) -> Option<(String, String)> {
    let (from, to) = s.split_once("->")?;
    let (from, to) = (from.trim(), to.trim());
    (!from.is_empty() && !to.is_empty()).then(|| (from.to_string(), to.to_string()))
}

fn parse_review(r: &Obj<'_>, review: &mut ReviewPlan) {
    if let Some(m) = r.block("metrics") {
        review.metrics = m
            .entries()
            .into_iter()
            .map(|(k, v)| (k, as_text(v).unwrap_or_default()))
            .collect();
    }
    if let Some(rr) = r.block("review_rubric") {
        rr.set_string("catalog_id", &mut review.catalog_id);
        rr.set_bool("export", &mut review.export);
    }
    match r.raw("adaptive_actions") {
        Some(Value::Sequence(items)) => {
            review.adaptive_actions = items
                .iter()
                .enumerate()
                .filter_map(|(i, item)| {
                    let o = Obj::new(item, format!("{}[{i}]", r.at("adaptive_actions")), r.ctx)?;
                    let mut rule = AdaptiveRule::default();
                    o.set_string("when", &mut rule.when);
                    o.set_string("do", &mut rule.action);
                    Some(rule)
                })
                .collect();
        }
        Some(Value::Null) => review.adaptive_actions.clear(),
        Some(_) => r.ctx.error(&r.at("adaptive_actions"), "expected a list"),
        None => r.ctx.missing(&r.at("adaptive_actions"), "key"),
    }
}

fn parse_budget(b: &Obj<'_>, spec: &mut BudgetSpec) {
    b.set_bool("enabled", &mut spec.enabled);
    if let Some(t) = b.block("targets") {
        t.set_f64("latency_ms", &mut spec.target_latency_ms);
        t.set_f64("cost_usd", &mut spec.target_cost_usd);
        t.set_f64("min_quality", &mut spec.min_quality);
    }
    if let Some(c) = b.block("caps") {
        c.set_count("max_tokens_cap", &mut spec.max_tokens_cap);
        c.set_count("max_tools_cap", &mut spec.max_tools_cap);
    }
    if let Some(g) = b.block("gains") {
        g.set_f64("tokens_up_pct", &mut spec.tokens_up_pct);
        g.set_f64("tokens_down_pct", &mut spec.tokens_down_pct);
        g.set_count("tool_step", &mut spec.tool_step);
    }
    if let Some(t) = b.block("thresholds") {
        t.set_f64("mus_heat", &mut spec.mus_heat);
        t.set_f64("mus_cool", &mut spec.mus_cool);
        t.set_f64("guard_soft_pct", &mut spec.guard_soft_pct);
        t.set_f64("guard_hard_pct", &mut spec.guard_hard_pct);
    }
    if let Some(s) = b.block("smoothing") {
        s.set_f64("ema_alpha", &mut spec.ema_alpha);
        s.set_f64("hysteresis_pct", &mut spec.hysteresis_pct);
        s.set_count("cooldown_steps", &mut spec.cooldown_steps);
    }
    if let Some(k) = b.block("knobs") {
        k.set_bool("allow_use_web_drop", &mut spec.allow_use_web_drop);
        k.set_bool("allow_reasoning_downgrade", &mut spec.allow_reasoning_downgrade);
    }
}

fn parse_fallbacks(f: &Obj<'_>, spec: &mut FallbackSpec) {
    f.set_bool("enabled", &mut spec.enabled);
    if let Some(t) = f.block("triggers") {
        t.set_bool("economy_mode", &mut spec.trigger_economy);
        t.set_count("max_context_chars", &mut spec.max_context_chars);
        t.set_f64("min_top1_sim", &mut spec.min_top1_sim);
        t.set_f64("min_avg_topk_sim", &mut spec.min_avg_topk_sim);
        t.set_count("topk", &mut spec.topk);
    }
    if let Some(a) = f.block("actions") {
        let mut order = Vec::new();
        a.set_strings("order", &mut order);
        if a.has("order") {
            spec.action_order = order.iter().map(|s| FallbackAction::parse(s)).collect();
        }
        if let Some(s) = a.block("summary") {
            s.set_count("target_tokens", &mut spec.summary_target_tokens);
            s.set_string("strategy", &mut spec.summary_strategy);
            s.set_count("map_chunk_chars", &mut spec.map_chunk_chars);
            s.set_count("reduce_passes", &mut spec.reduce_passes);
        }
        if let Some(r) = a.block("rag") {
            r.set_count("k", &mut spec.rag_k);
            r.set_f64("mmr_lambda", &mut spec.mmr_lambda);
            r.set_f64("min_sim", &mut spec.rag_min_sim);
            r.set_string("cache_dir", &mut spec.cache_dir);
        }
        if let Some(p) = a.block("partial") {
            p.set_f64("stop_when_confidence", &mut spec.stop_when_confidence);
        }
    }
}

fn parse_connectors(c: &Obj<'_>, spec: &mut ConnectorSpec) {
    if let Some(l) = c.block("langgraph") {
        l.set_bool("enabled", &mut spec.graph_enabled);
        if let Some(g) = l.block("graph_contract") {
            g.set_strings("node_spec_fields", &mut spec.node_fields);
            g.set_strings("edge_spec_fields", &mut spec.edge_fields);
        }
        if let Some(r) = l.block("runtime_policies") {
            r.set_count("max_steps", &mut spec.runtime.max_steps);
            r.set_count("retry", &mut spec.runtime.retry);
            r.set_string("backoff", &mut spec.runtime.backoff);
            r.set_count("parallel_branches", &mut spec.runtime.parallel_branches);
        }
        if let Some(o) = l.block("observability") {
            o.set_strings("hooks", &mut spec.hooks);
        }
    }
    if let Some(cr) = c.block("crewai") {
        cr.set_bool("enabled", &mut spec.crew_enabled);
        match cr.raw("roles") {
            Some(Value::Null) | None => spec.roles.clear(),
            Some(Value::Sequence(items)) => {
                spec.roles = items
                    .iter()
                    .map(|item| match item {
                        Value::Mapping(m) => m
                            .iter()
                            .map(|(k, v)| (super::reader::key_string(k), as_text(v).unwrap_or_default()))
                            .collect(),
                        _ => BTreeMap::new(),
                    })
                    .collect();
            }
            Some(_) => cr.ctx.error(&cr.at("roles"), "expected a list"),
        }
        if let Some(t) = cr.obj("task_contract") {
            spec.task_contract = t
                .entries()
                .into_iter()
                .map(|(k, v)| (k, as_text(v).unwrap_or_default()))
                .collect();
        }
        if let Some(s) = cr.block("supervision") {
            s.set_string("reviewer_role", &mut spec.reviewer_role);
            s.set_string("escalation_rules", &mut spec.escalation_rules);
            s.set_count("max_rounds", &mut spec.max_rounds);
        }
    }
}

fn parse_observability(o: &Obj<'_>, spec: &mut TelemetrySpec) {
    if let Some(t) = o.block("tracing") {
        t.set_string("standard", &mut spec.trace_standard);
        t.set_string("trace_id", &mut spec.trace_id);
        t.set_string("span_format", &mut spec.span_format);
        t.set_bool("events_enabled", &mut spec.events_enabled);
    }
    if let Some(m) = o.block("metrics_export") {
        m.set_strings("include", &mut spec.metrics_include);
    }
    if let Some(p) = o.block("privacy") {
        p.set_bool("pii_redaction", &mut spec.pii_redaction);
        p.set_f64("sampling_rate", &mut spec.sampling_rate);
    }
    if let Some(r) = o.block("retention") {
        r.set_count("run_logs_ttl_days", &mut spec.run_logs_ttl_days);
        r.set_count("review_exports_ttl_days", &mut spec.review_exports_ttl_days);
    }
}

fn parse_profiles(p: &Obj<'_>) -> BTreeMap<ProfileId, ProfileSpec> {
    let mut out = BTreeMap::new();
    for (name, value) in p.entries() {
        let Ok(id) = name.parse::<ProfileId>() else {
            p.ctx.error(&p.at(&name), format!("unknown profile \"{name}\""));
            continue;
        };
        let Some(o) = Obj::new(value, p.at(&name), p.ctx) else {
            continue;
        };
        let mut spec = ProfileSpec::default();
        o.set_string("default_mode", &mut spec.default_mode);
        o.set_bool("use_web", &mut spec.use_web);
        if let Some(g) = o.raw("extra_gates") {
            spec.extra_gates = parse_gates(g, &o.at("extra_gates"), o.ctx);
        }
        for key in ["review_swap", "review_swaps"] {
            let Some(v) = o.raw(key) else { continue };
            let items = match v {
                Value::String(s) => vec![s.clone()],
                other => string_list(other, &o.at(key), o.ctx).unwrap_or_default(),
            };
            for s in items {
                match parse_swap(&s) {
                    Some(swap) => spec.criterion_swaps.push(swap),
                    None => o.ctx.error(&o.at(key), format!("malformed swap \"{s}\"")),
                }
            }
        }
        for key in ["add_criterion", "add_criteria"] {
            let Some(v) = o.raw(key) else { continue };
            let items: Vec<&Value> = match v {
                Value::Sequence(items) => items.iter().collect(),
                other => vec![other],
            };
            for (i, item) in items.into_iter().enumerate() {
                let Some(c) = Obj::new(item, format!("{}[{i}]", o.at(key)), o.ctx) else {
                    continue;
                };
                let mut cid = String::new();
                let mut weight = 0.0;
                c.set_string("id", &mut cid);
                c.set_f64("weight", &mut weight);
                spec.added_criteria.push((cid, weight));
            }
        }
        out.insert(id, spec);
    }
    out
}

/// Folds the validation-phase profile notes, swaps and gates into the
/// top-level profile map, dropping exact duplicates.
fn merge_phase_profiles(
    profiles: &mut BTreeMap<ProfileId, ProfileSpec>,
    phase_profiles: PhaseProfiles,
    ctx: &Ctx,
) {
    for (name, extra) in phase_profiles {
        let Ok(id) = name.parse::<ProfileId>() else {
            ctx.error(
                &format!("phases.4_validation.profiles.{name}"),
                format!("unknown profile \"{name}\""),
            );
            continue;
        };
        let spec = profiles.entry(id).or_default();
        spec.notes = extra.notes;
        for swap in extra.criterion_swaps {
            if !spec.criterion_swaps.contains(&swap) {
                spec.criterion_swaps.push(swap);
            }
        }
        for gate in extra.extra_gates {
            if !spec.extra_gates.iter().any(|g| g.id == gate.id) {
                spec.extra_gates.push(gate);
            }
        }
    }
}

fn parse_inputs(i: &Obj<'_>, io: &mut InputOutputSpec) {
    i.set_string("context_input", &mut io.context_input);
    io.goal = i.opt_string("goal");
    match i.raw("artifacts") {
        Some(Value::Sequence(items)) => {
            io.artifacts = items
                .iter()
                .enumerate()
                .filter_map(|(n, item)| {
                    let o = Obj::new(item, format!("{}[{n}]", i.at("artifacts")), i.ctx)?;
                    let mut a = ArtifactRef::default();
                    o.set_string("name", &mut a.name);
                    o.set_string("type", &mut a.kind);
                    Some(a)
                })
                .collect();
        }
        Some(Value::Null) => io.artifacts.clear(),
        Some(_) => i.ctx.error(&i.at("artifacts"), "expected a list"),
        None => i.ctx.missing(&i.at("artifacts"), "key"),
    }
}

fn parse_outputs(o: &Obj<'_>, io: &mut InputOutputSpec) {
    if let Some(s) = o.block("structured") {
        s.set_string("type", &mut io.structured_type);
        io.schema_hint = s.opt_string("schema_hint");
        io.structured_include.clear();
        if s.has("include") {
            s.set_strings("include", &mut io.structured_include);
        }
    }
    if let Some(l) = o.block("logging") {
        l.set_strings("include", &mut io.logging_include);
    }
}

fn parse_snippets(s: &Obj<'_>) -> BTreeMap<String, Snippet> {
    let mut out = BTreeMap::new();
    for (name, value) in s.entries() {
        let path = s.at(&name);
        let snippet = match value {
            Value::String(text) => Snippet::Text(text.clone()),
            Value::Mapping(_) => {
                let Some(o) = Obj::new(value, path, s.ctx) else { continue };
                if o.has("example") {
                    let mut text = String::new();
                    o.set_string("example", &mut text);
                    Snippet::Example(text)
                } else {
                    let mut preset = Preset::default();
                    if o.has("temperature") {
                        let mut t = 0.0;
                        o.set_f64("temperature", &mut t);
                        preset.temperature = Some(t);
                    }
                    if o.has("reasoning_effort") {
                        let mut l = Level::default();
                        o.set_parsed("reasoning_effort", &mut l);
                        preset.reasoning_effort = Some(l);
                    }
                    if let Some(t) = o.obj("tool_call_budget") {
                        let mut n = 0u32;
                        t.set_count("max_calls", &mut n);
                        preset.max_calls = Some(n);
                    }
                    Snippet::Preset(preset)
                }
            }
            _ => {
                s.ctx.error(&path, "expected text or a mapping");
                continue;
            }
        };
        out.insert(name, snippet);
    }
    out
}
