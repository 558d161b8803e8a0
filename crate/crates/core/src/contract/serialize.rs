//! Renders a [`ContractDoc`] back into the declarative YAML layout.

use serde_yaml::{Mapping, Value};

use super::types::*;

fn map<'a>(pairs: impl IntoIterator<Item = (&'a str, Value)>) -> Value {
    let mut m = Mapping::new();
    for (k, v) in pairs {
        m.insert(Value::String(k.to_string()), v);
    }
    Value::Mapping(m)
}

fn s(x: &str) -> Value {
    Value::String(x.to_string())
}

fn list(xs: &[String]) -> Value {
    Value::Sequence(xs.iter().map(|x| s(x)).collect())
}

fn f(x: f64) -> Value {
    Value::Number(x.into())
}

fn n(x: impl Into<u64>) -> Value {
    Value::Number(x.into().into())
}

fn opt_s(x: &Option<String>) -> Value {
    x.as_deref().map(s).unwrap_or(Value::Null)
}

fn gates(gs: &[Gate]) -> Value {
    Value::Sequence(
        gs.iter()
            .map(|g| map([("id", s(&g.id)), ("min_score", n(g.min_score))]))
            .collect(),
    )
}

/// The document as a YAML value rooted at `root_key`.
pub fn to_yaml_value(doc: &ContractDoc) -> Value {
    let mut body = vec![("version", s(&doc.version))];
    if let Some(r) = &doc.rationale {
        body.push(("rationale", s(r)));
    }
    body.extend([
        (
            "meta",
            map([
                ("title", s(&doc.meta.title)),
                ("owner", s(&doc.meta.owner)),
                ("date", s(&doc.meta.date)),
                ("tags", list(&doc.meta.tags)),
            ]),
        ),
        ("prefaces", prefaces(doc)),
        (
            "scope",
            map([
                ("topic_domain", s(&doc.scope.topic_domain)),
                ("success_criteria", list(&doc.scope.success_criteria)),
                ("constraints", list(&doc.scope.constraints)),
                ("assumptions", list(&doc.scope.assumptions)),
            ]),
        ),
        ("phases", phases(doc)),
        ("adaptive_budgeting", budget(&doc.budget)),
        ("fallbacks", fallbacks(&doc.fallback)),
        ("connectors", connectors(&doc.connectors)),
        ("observability_central", observability(&doc.telemetry_spec)),
        (
            "switches",
            map([
                ("agentic_mode", s(doc.switches.agentic_mode.as_str())),
                ("use_web_search", Value::Bool(doc.switches.use_web_search)),
                ("allow_partial_completion", Value::Bool(doc.switches.allow_partial_completion)),
                ("produce_citations", s(&doc.switches.produce_citations)),
                ("produce_review_export", Value::Bool(doc.switches.produce_review_export)),
            ]),
        ),
        ("profiles", profiles(doc)),
        ("inputs", inputs(&doc.io)),
        ("outputs", outputs(&doc.io)),
        ("snippets", snippets(doc)),
    ]);
    if let Some(p) = doc.resolved_profile {
        body.push(("resolved_profile", s(p.as_str())));
    }
    let mut root = Mapping::new();
    root.insert(s(&doc.root_key), map(body));
    Value::Mapping(root)
}

/// The document as YAML text; `parse_contract` reads it back unchanged.
pub fn serialize_contract(doc: &ContractDoc) -> String {
    serde_yaml::to_string(&to_yaml_value(doc)).expect("contract values are always representable")
}

fn prefaces(doc: &ContractDoc) -> Value {
    let mp = &doc.model_profile;
    let model_profile = map([
        ("model_family", s(&mp.model_family)),
        ("reasoning_effort", s(mp.reasoning_effort.as_str())),
        (
            "verbosity",
            map([
                ("default", s(mp.verbosity_default.as_str())),
                ("code_blocks", s(mp.verbosity_code_blocks.as_str())),
            ]),
        ),
        ("eagerness_mode", s(mp.eagerness_mode.as_str())),
        (
            "tool_call_budget",
            map([
                ("max_calls", n(mp.tool_call_budget_max)),
                ("parallel_batches", n(mp.parallel_batches)),
            ]),
        ),
        (
            "determinism",
            map([
                ("seed", mp.seed.map(|x| Value::Number(x.into())).unwrap_or(Value::Null)),
                ("temperature", f(mp.temperature)),
            ]),
        ),
    ]);
    let price = match &doc.budget.price_per_token_est {
        Param::Value(v) => f(*v),
        Param::Slot(slot) => s(slot),
    };
    let telemetry = map([
        ("capture", Value::Bool(doc.telemetry_spec.capture)),
        ("fields", list(&doc.telemetry_spec.fields)),
        ("cost_budget_tokens", n(doc.budget.cost_budget_tokens)),
        ("latency_budget_ms", f(doc.budget.latency_budget_ms)),
        ("price_per_token_est", price),
    ]);
    let memory = map([
        ("strategy", s(doc.memory_spec.strategy.as_str())),
        ("previous_response_id", opt_s(&doc.memory_spec.previous_response_id)),
        ("traceability", s(&doc.memory_spec.traceability)),
    ]);
    let g = &doc.guardrails;
    let tools = Value::Mapping(
        g.uncertainty_tools
            .iter()
            .map(|(k, v)| (s(k), s(v.as_str())))
            .collect(),
    );
    let guardrails = map([
        (
            "stop_conditions",
            Value::Sequence(g.stop_conditions.iter().map(|r| s(&r.text)).collect()),
        ),
        (
            "uncertainty_thresholds",
            map([("default", s(g.uncertainty_default.as_str())), ("tools", tools)]),
        ),
        ("safety_policy", list(&g.safety_policies)),
    ]);
    let preambles = Value::Sequence(
        doc.phases
            .preambles
            .iter()
            .map(|p| map([("name", s(&p.name)), ("content", s(&p.content))]))
            .collect(),
    );
    map([
        ("model_profile", model_profile),
        ("telemetry", telemetry),
        ("memory_reuse", memory),
        ("guardrails", guardrails),
        ("agentic_preambles", preambles),
        (
            "agentic_modes",
            map([
                ("low_eagerness", s(&doc.phases.agentic_modes.low_eagerness)),
                ("high_eagerness", s(&doc.phases.agentic_modes.high_eagerness)),
            ]),
        ),
    ])
}

fn phases(doc: &ContractDoc) -> Value {
    let p = &doc.phases;
    let mut execution = vec![("rules", list(&p.execution_rules))];
    if let Some(c) = &p.code_editing_rules {
        execution.push(("code_editing_rules", s(c)));
    }
    if let Some(z) = &p.zero_to_one_booster {
        execution.push(("zero_to_one_booster", s(z)));
    }

    let v = &p.validation;
    let sc = &doc.scoring;
    let procedures = Value::Sequence(
        v.procedures
            .iter()
            .map(|pr| {
                let mut fields = vec![("id", s(&pr.id)), ("goal", s(&pr.goal))];
                if !pr.checks.is_empty() {
                    fields.push(("checks", list(&pr.checks)));
                }
                map(fields)
            })
            .collect(),
    );
    let criteria = Value::Sequence(
        sc.criteria
            .iter()
            .map(|c| {
                let logic = match c.logic {
                    CriterionLogic::Direct => "direct",
                    CriterionLogic::Inverse => "inverse",
                };
                map([("id", s(&c.id)), ("logic", s(logic))])
            })
            .collect(),
    );
    let weights = Value::Mapping(sc.weights.iter().map(|(k, w)| (s(k), f(*w))).collect());
    let mut phase_profiles = Mapping::new();
    for (id, prof) in &doc.profiles {
        if !prof.notes.is_empty() {
            phase_profiles.insert(s(id.as_str()), map([("extras", list(&prof.notes))]));
        }
    }
    let mut validation = vec![(
        "artifacts",
        map([
            ("evidence_docket", map([("fields", list(&v.evidence_fields))])),
            ("assumptions_register", map([("fields", list(&v.assumption_fields))])),
            ("derivation_trace", map([("fields", list(&v.derivation_fields))])),
        ]),
    )];
    if !v.checks.is_empty() {
        validation.push(("checks", list(&v.checks)));
    }
    validation.push((
        "decision_hygiene",
        map([
            ("procedures", procedures),
            (
                "scoring_model",
                map([("criteria", criteria), ("weights", weights), ("gates", gates(&sc.gates))]),
            ),
            ("metrics_export", map([("fields", list(&sc.metrics_fields))])),
        ]),
    ));
    if !phase_profiles.is_empty() {
        validation.push(("profiles", Value::Mapping(phase_profiles)));
    }

    let r = &p.review;
    let metrics = Value::Mapping(r.metrics.iter().map(|(k, v)| (s(k), s(v))).collect());
    let actions = Value::Sequence(
        r.adaptive_actions
            .iter()
            .map(|a| map([("when", s(&a.when)), ("do", s(&a.action))]))
            .collect(),
    );

    map([
        ("1_analysis", map([("steps", list(&p.analysis_steps))])),
        ("2_plan", map([("steps", list(&p.plan_steps))])),
        ("3_execution", map(execution)),
        ("4_validation", map(validation)),
        (
            "5_review",
            map([
                ("metrics", metrics),
                (
                    "review_rubric",
                    map([("catalog_id", s(&r.catalog_id)), ("export", Value::Bool(r.export))]),
                ),
                ("adaptive_actions", actions),
            ]),
        ),
        ("6_handoff", map([("deliverables", list(&p.handoff_deliverables))])),
        ("7_changelog", map([("format", s(&p.changelog_format))])),
    ])
}

fn budget(b: &BudgetSpec) -> Value {
    map([
        ("enabled", Value::Bool(b.enabled)),
        (
            "targets",
            map([
                ("latency_ms", f(b.target_latency_ms)),
                ("cost_usd", f(b.target_cost_usd)),
                ("min_quality", f(b.min_quality)),
            ]),
        ),
        (
            "caps",
            map([("max_tokens_cap", n(b.max_tokens_cap)), ("max_tools_cap", n(b.max_tools_cap))]),
        ),
        (
            "gains",
            map([
                ("tokens_up_pct", f(b.tokens_up_pct)),
                ("tokens_down_pct", f(b.tokens_down_pct)),
                ("tool_step", n(b.tool_step)),
            ]),
        ),
        (
            "thresholds",
            map([
                ("mus_heat", f(b.mus_heat)),
                ("mus_cool", f(b.mus_cool)),
                ("guard_soft_pct", f(b.guard_soft_pct)),
                ("guard_hard_pct", f(b.guard_hard_pct)),
            ]),
        ),
        (
            "smoothing",
            map([
                ("ema_alpha", f(b.ema_alpha)),
                ("hysteresis_pct", f(b.hysteresis_pct)),
                ("cooldown_steps", n(b.cooldown_steps)),
            ]),
        ),
        (
            "knobs",
            map([
                ("allow_use_web_drop", Value::Bool(b.allow_use_web_drop)),
                ("allow_reasoning_downgrade", Value::Bool(b.allow_reasoning_downgrade)),
            ]),
        ),
    ])
}

fn fallbacks(fb: &FallbackSpec) -> Value {
    map([
        ("enabled", Value::Bool(fb.enabled)),
        (
            "triggers",
            map([
                ("economy_mode", Value::Bool(fb.trigger_economy)),
                ("max_context_chars", n(fb.max_context_chars as u64)),
                ("min_top1_sim", f(fb.min_top1_sim)),
                ("min_avg_topk_sim", f(fb.min_avg_topk_sim)),
                ("topk", n(fb.topk as u64)),
            ]),
        ),
        (
            "actions",
            map([
                (
                    "order",
                    Value::Sequence(fb.action_order.iter().map(|a| s(a.as_str())).collect()),
                ),
                (
                    "summary",
                    map([
                        ("target_tokens", n(fb.summary_target_tokens as u64)),
                        ("strategy", s(&fb.summary_strategy)),
                        ("map_chunk_chars", n(fb.map_chunk_chars as u64)),
                        ("reduce_passes", n(fb.reduce_passes as u64)),
                    ]),
                ),
                (
                    "rag",
                    map([
                        ("k", n(fb.rag_k as u64)),
                        ("mmr_lambda", f(fb.mmr_lambda)),
                        ("min_sim", f(fb.rag_min_sim)),
                        ("cache_dir", s(&fb.cache_dir)),
                    ]),
                ),
                ("partial", map([("stop_when_confidence", f(fb.stop_when_confidence))])),
            ]),
        ),
    ])
}

fn connectors(c: &ConnectorSpec) -> Value {
    let roles = if c.roles.is_empty() {
        Value::Null
    } else {
        Value::Sequence(
            c.roles
                .iter()
                .map(|r| Value::Mapping(r.iter().map(|(k, v)| (s(k), s(v))).collect()))
                .collect(),
        )
    };
    map([
        (
            "langgraph",
            map([
                ("enabled", Value::Bool(c.graph_enabled)),
                (
                    "graph_contract",
                    map([
                        ("node_spec_fields", list(&c.node_fields)),
                        ("edge_spec_fields", list(&c.edge_fields)),
                    ]),
                ),
                (
                    "runtime_policies",
                    map([
                        ("max_steps", n(c.runtime.max_steps)),
                        ("retry", n(c.runtime.retry)),
                        ("backoff", s(&c.runtime.backoff)),
                        ("parallel_branches", n(c.runtime.parallel_branches)),
                    ]),
                ),
                ("observability", map([("hooks", list(&c.hooks))])),
            ]),
        ),
        (
            "crewai",
            map([
                ("enabled", Value::Bool(c.crew_enabled)),
                ("roles", roles),
                (
                    "task_contract",
                    Value::Mapping(c.task_contract.iter().map(|(k, v)| (s(k), s(v))).collect()),
                ),
                (
                    "supervision",
                    map([
                        ("reviewer_role", s(&c.reviewer_role)),
                        ("escalation_rules", s(&c.escalation_rules)),
                        ("max_rounds", n(c.max_rounds)),
                    ]),
                ),
            ]),
        ),
    ])
}

fn observability(t: &TelemetrySpec) -> Value {
    map([
        (
            "tracing",
            map([
                ("standard", s(&t.trace_standard)),
                ("trace_id", s(&t.trace_id)),
                ("span_format", s(&t.span_format)),
                ("events_enabled", Value::Bool(t.events_enabled)),
            ]),
        ),
        ("metrics_export", map([("include", list(&t.metrics_include))])),
        (
            "privacy",
            map([
                ("pii_redaction", s(if t.pii_redaction { "on" } else { "off" })),
                ("sampling_rate", f(t.sampling_rate)),
            ]),
        ),
        (
            "retention",
            map([
                ("run_logs_ttl_days", n(t.run_logs_ttl_days)),
                ("review_exports_ttl_days", n(t.review_exports_ttl_days)),
            ]),
        ),
    ])
}

fn profiles(doc: &ContractDoc) -> Value {
    let mut out = Mapping::new();
    for (id, p) in &doc.profiles {
        let mut fields = vec![
            ("default_mode", s(&p.default_mode)),
            ("use_web", Value::Bool(p.use_web)),
        ];
        if !p.extra_gates.is_empty() {
            fields.push(("extra_gates", gates(&p.extra_gates)));
        }
        let swaps: Vec<String> = p
            .criterion_swaps
            .iter()
            .map(|(a, b)| format!("{a}->{b}"))
            .collect();
        match swaps.len() {
            0 => {}
            1 => fields.push(("review_swap", s(&swaps[0]))),
            _ => fields.push(("review_swaps", list(&swaps))),
        }
        let added: Vec<Value> = p
            .added_criteria
            .iter()
            .map(|(id, w)| map([("id", s(id)), ("weight", f(*w))]))
            .collect();
        match added.len() {
            0 => {}
            1 => fields.push(("add_criterion", added[0].clone())),
            _ => fields.push(("add_criteria", Value::Sequence(added))),
        }
        out.insert(s(id.as_str()), map(fields));
    }
    Value::Mapping(out)
}

fn inputs(io: &InputOutputSpec) -> Value {
    let mut fields = vec![("context_input", s(&io.context_input))];
    if let Some(g) = &io.goal {
        fields.push(("goal", s(g)));
    }
    fields.push((
        "artifacts",
        Value::Sequence(
            io.artifacts
                .iter()
                .map(|a| map([("name", s(&a.name)), ("type", s(&a.kind))]))
                .collect(),
        ),
    ));
    map(fields)
}

fn outputs(io: &InputOutputSpec) -> Value {
    let mut structured = vec![("type", s(&io.structured_type))];
    if let Some(h) = &io.schema_hint {
        structured.push(("schema_hint", s(h)));
    }
    if !io.structured_include.is_empty() {
        structured.push(("include", list(&io.structured_include)));
    }
    map([
        ("structured", map(structured)),
        ("logging", map([("include", list(&io.logging_include))])),
    ])
}

fn snippets(doc: &ContractDoc) -> Value {
    let mut out = Mapping::new();
    for (name, snip) in &doc.snippets {
        let v = match snip {
            Snippet::Text(t) => s(t),
            Snippet::Example(t) => map([("example", s(t))]),
            Snippet::Preset(p) => {
                let mut fields = Vec::new();
                if let Some(t) = p.temperature {
                    fields.push(("temperature", f(t)));
                }
                if let Some(l) = p.reasoning_effort {
                    fields.push(("reasoning_effort", s(l.as_str())));
                }
                if let Some(m) = p.max_calls {
                    fields.push(("tool_call_budget", map([("max_calls", n(m))])));
                }
                map(fields)
            }
        };
        out.insert(s(name), v);
    }
    Value::Mapping(out)
}

#[cfg(test)]
mod tests {
    use crate::contract::{baseline, parse_contract, serialize_contract};

    #[test]
    fn baseline_round_trips() {
        let doc = baseline();
        let text = serialize_contract(doc);
        let parsed = parse_contract(&text).unwrap();
        assert!(parsed.diagnostics.is_empty(), "{:?}", parsed.diagnostics);
        assert_eq!(&parsed.doc, doc);
    }
}
