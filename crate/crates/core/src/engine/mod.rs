//! Seven-phase run state machine.
//!
//! A run moves 1 → 2 → 3 → 4 → 5 → 6 → 7, with 4 → 2 as the only back edge.
//! Every backend reply is charged to the spend ledger and checked against
//! the guardrails before anything else happens; budget adjustment follows
//! at each transition of phases 1 to 5.

mod guard;
mod handoff;
mod prompt;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::{Backend, ModelRequest, ModelResponse};
use crate::budget::{self, AdjustmentEvent, BudgetState, GuardStatus, SpendDelta, SpendLedger};
use crate::clock::{rfc3339, Clock};
use crate::contract::{apply_profile, validate, ContractDoc, Level, Param};
use crate::diag::has_errors;
use crate::exec::ExecMode;
use crate::fallback::{self, ActionTaken, CascadeEnv, ContextBundle, Embedder, EmbeddingCache, FallbackOutcome, StageOptions};
use crate::hygiene::{self, ChecklistPayload, EvidenceItem, ExportInputs, GateStatus, ReviewMetrics, Verdict};
use crate::phase::Phase;
use crate::telemetry::{
    sample_event, EventKind, FailureRecord, JsonlSink, MetricsExport, SinkRecord, SpanHandle, TelemetryError,
    TelemetryEvent, Tracer,
};

pub use guard::{check_guardrails, triggered_actions, AdaptiveAction, GuardContext, GuardrailDecision};
pub use handoff::{ChangelogEntry, HandoffBundle};
pub use prompt::{checklist_instructions, fill_template, is_placeholder, phase_instructions};

use handoff::{strings, text};

/// Template bindings supplied at run start, e.g. `context_input`.
pub type Bindings = BTreeMap<String, String>;

/// Splits `key=value`.
pub fn parse_binding(s: &str) -> Result<(String, String), EngineError> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.to_string())),
        _ => Err(EngineError::BadBinding {
            key: s.to_string(),
            message: "expected key=value".into(),
        }),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("unresolved binding \"{0}\"")]
    UnresolvedBinding(String),
    #[error("binding {key}: {message}")]
    BadBinding { key: String, message: String },
    #[error("invalid contract: {0}")]
    InvalidContract(String),
    #[error("run already terminated")]
    Terminated,
    #[error("run is awaiting confirmation for \"{0}\"")]
    AwaitingConfirmation(String),
    #[error("run is not awaiting confirmation")]
    NotAwaiting,
    #[error("approval token does not match the pending confirmation")]
    ApprovalMismatch,
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Partial,
    StoppedCost,
    StoppedLatency,
    Rejected,
    AwaitingConfirmation,
    /// The backend failed after retries.
    Failed,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::Partial => "partial",
            Outcome::StoppedCost => "stopped_cost",
            Outcome::StoppedLatency => "stopped_latency",
            Outcome::Rejected => "rejected",
            Outcome::AwaitingConfirmation => "awaiting_confirmation",
            Outcome::Failed => "failed",
        }
    }

    /// Process exit status for the CLI.
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Completed => 0,
            Outcome::Rejected => 3,
            Outcome::StoppedCost | Outcome::StoppedLatency | Outcome::Partial => 4,
            Outcome::AwaitingConfirmation => 5,
            Outcome::Failed => 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseStatus {
    Ok,
    Revised,
    Skipped,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub started_at: String,
    pub ended_at: String,
    pub status: PhaseStatus,
    pub artifacts: Value,
    /// Spend after the phase, for monotonicity checks.
    pub spend: SpendLedger,
}

/// What one `advance` call did.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOutcome {
    pub phase: Phase,
    /// `None` when the phase was suspended for confirmation.
    pub status: Option<PhaseStatus>,
    pub next: Option<Phase>,
    pub outcome: Option<Outcome>,
}

/// Run flags taken from bindings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOptions {
    pub critical: bool,
    pub double_evaluation: bool,
    pub price_per_token: f64,
    pub goal: Option<String>,
}

/// Explicit approval for one pending destructive tool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApprovalToken {
    pub correlation_id: String,
    pub tool: String,
}

/// Execution resources for a run. Shared, read-only.
pub struct Runtime<'a> {
    pub backend: &'a dyn Backend,
    pub clock: &'a dyn Clock,
    pub sink: Option<&'a JsonlSink>,
    pub embedder: Option<&'a dyn Embedder>,
    pub cache: Option<&'a EmbeddingCache>,
    pub mode: ExecMode,
}

impl<'a> Runtime<'a> {
    pub fn new(backend: &'a dyn Backend, clock: &'a dyn Clock) -> Self {
        Self {
            backend,
            clock,
            sink: None,
            embedder: None,
            cache: None,
            mode: ExecMode::default(),
        }
    }
}

#[derive(Debug)]
struct Suspended {
    responses: Vec<ModelResponse>,
    started_ms: i64,
    span_id: String,
}

#[derive(Debug)]
pub struct RunState {
    pub correlation_id: String,
    pub contract: ContractDoc,
    /// `None` once terminated.
    pub current_phase: Option<Phase>,
    pub phase_records: Vec<PhaseRecord>,
    pub spend: SpendLedger,
    pub budget_state: BudgetState,
    pub rounds_used: u32,
    pub mode: GuardStatus,
    pub previous_response_id: Option<String>,
    pub changelog: Vec<ChangelogEntry>,
    pub outcome: Option<Outcome>,
    pub options: RunOptions,
    /// Approve destructive tools without suspending (test fixtures only).
    pub auto_approve: bool,
    pub approved_tools: BTreeSet<String>,
    pub pending_confirmation: Option<String>,
    pub adjust_log: Vec<AdjustmentEvent>,
    pub failures: Vec<FailureRecord>,
    pub fired_actions: Vec<AdaptiveAction>,
    pub skip_optional_tools: bool,
    pub verbosity_forced_low: bool,
    pub review: Option<ReviewMetrics>,
    pub handoff: Option<HandoffBundle>,
    pub fallback: Option<FallbackOutcome>,
    /// Working context after any fallback reduction.
    pub context: String,
    pub partial_context: bool,
    pub safe_stop_occurred: bool,
    pub diffs: Vec<String>,
    pub goal_rewrite: Option<String>,
    economy_fallback_pending: bool,
    handoff_payload: Option<Value>,
    last_text: String,
    revise_notes: Vec<String>,
    suspended: Option<Suspended>,
    tracer: Tracer,
    rng: ChaCha8Rng,
}

fn parse_flag(bindings: &Bindings, key: &str) -> Result<bool, EngineError> {
    match bindings.get(key).map(|s| s.trim()) {
        None => Ok(false),
        Some("true" | "1" | "yes" | "on") => Ok(true),
        Some("false" | "0" | "no" | "off") => Ok(false),
        Some(other) => Err(EngineError::BadBinding {
            key: key.into(),
            message: format!("expected a boolean, got \"{other}\""),
        }),
    }
}

/// Price per token: binding, then the contract, then target cost spread
/// over the token budget.
fn price_per_token(contract: &ContractDoc, bindings: &Bindings) -> Result<f64, EngineError> {
    if let Some(s) = bindings.get("price_per_token_est") {
        return s.trim().parse::<f64>().ok().filter(|p| *p >= 0.0).ok_or_else(|| EngineError::BadBinding {
            key: "price_per_token_est".into(),
            message: format!("expected a non-negative number, got \"{s}\""),
        });
    }
    let b = &contract.budget;
    Ok(match b.price_per_token_est {
        Param::Value(v) => v,
        Param::Slot(_) if b.cost_budget_tokens > 0 => b.target_cost_usd / f64::from(b.cost_budget_tokens),
        Param::Slot(_) => 0.0,
    })
}

/// Validates the contract, resolves bindings and builds the initial state.
pub fn start_run(contract: &ContractDoc, bindings: &Bindings, rng_seed: u64) -> Result<RunState, EngineError> {
    let mut contract = contract.clone();
    if let Some(p) = bindings.get("profile") {
        if contract.resolved_profile.map(|r| r.as_str()) != Some(p.as_str()) {
            contract = apply_profile(&contract, p).map_err(|e| EngineError::InvalidContract(e.to_string()))?;
        }
    }
    let diags = validate(&contract);
    if has_errors(&diags) {
        let msg = diags.iter().filter(|d| d.is_error()).map(ToString::to_string).collect::<Vec<_>>().join("; ");
        return Err(EngineError::InvalidContract(msg));
    }
    let context = match bindings.get("context_input") {
        Some(c) => c.clone(),
        None if !is_placeholder(&contract.io.context_input) => contract.io.context_input.clone(),
        None => return Err(EngineError::UnresolvedBinding("context_input".into())),
    };
    let previous_response_id = match contract.memory_spec.previous_response_id.as_deref() {
        Some(v) if !is_placeholder(v) => Some(v.to_string()),
        _ => bindings.get("previous_response_id").filter(|s| !s.is_empty()).cloned(),
    };
    let options = RunOptions {
        critical: parse_flag(bindings, "critical")?,
        double_evaluation: parse_flag(bindings, "double_evaluation")?,
        price_per_token: price_per_token(&contract, bindings)?,
        goal: bindings.get("goal").cloned().or_else(|| contract.io.goal.clone().filter(|g| !is_placeholder(g))),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let correlation_id = match bindings.get("correlation_id") {
        Some(id) => id.clone(),
        None => format!("run-{}", crate::telemetry::opaque_id(&rng.gen::<u64>().to_string())),
    };
    let mut ids = BTreeMap::new();
    ids.insert("correlation_id", correlation_id.clone());
    let trace_id = match fill_template(&contract.telemetry_spec.trace_id, &ids) {
        t if t.is_empty() || t.contains("{{") => correlation_id.clone(),
        t => t,
    };
    let budget_state = BudgetState::new(&contract.budget, contract.model_profile.tool_call_budget_max);
    let tracer = Tracer::new(trace_id, contract.telemetry_spec.span_format.clone());
    Ok(RunState {
        correlation_id,
        current_phase: Some(Phase::Analysis),
        phase_records: Vec::new(),
        spend: SpendLedger::default(),
        budget_state,
        rounds_used: 0,
        mode: GuardStatus::Normal,
        previous_response_id,
        changelog: Vec::new(),
        outcome: None,
        options,
        auto_approve: false,
        approved_tools: BTreeSet::new(),
        pending_confirmation: None,
        adjust_log: Vec::new(),
        failures: Vec::new(),
        fired_actions: Vec::new(),
        skip_optional_tools: false,
        verbosity_forced_low: false,
        review: None,
        handoff: None,
        fallback: None,
        context,
        partial_context: false,
        safe_stop_occurred: false,
        diffs: Vec::new(),
        goal_rewrite: None,
        economy_fallback_pending: false,
        handoff_payload: None,
        last_text: String::new(),
        revise_notes: Vec::new(),
        suspended: None,
        tracer,
        rng,
        contract,
    })
}

impl RunState {
    pub fn is_terminated(&self) -> bool {
        self.current_phase.is_none()
    }

    pub fn trace_id(&self) -> &str {
        self.tracer.trace_id()
    }

    /// Phase ordinals of the recorded phases, e.g. `[1, 2, 3, 4, 5, 6, 7]`.
    pub fn phase_sequence(&self) -> Vec<u8> {
        self.phase_records.iter().map(|r| r.phase.ordinal()).collect()
    }

    fn partial_allowed(&self) -> bool {
        self.contract.switches.allow_partial_completion
    }

    fn guard_context(&self) -> GuardContext {
        GuardContext {
            price_per_token: self.options.price_per_token,
            critical: self.options.critical,
        }
    }
}

enum Halt {
    Stop(Outcome, String),
    Confirm(String),
    Abort(String),
}

struct Transition {
    next: Option<Phase>,
    status: PhaseStatus,
    artifacts: Value,
    outcome: Option<Outcome>,
}

impl Transition {
    fn to(next: Phase, artifacts: Value) -> Self {
        Self { next: Some(next), status: PhaseStatus::Ok, artifacts, outcome: None }
    }
}

struct PhaseRun<'s, 'r> {
    st: &'s mut RunState,
    rt: &'r Runtime<'r>,
    phase: Phase,
    replay: VecDeque<ModelResponse>,
    received: Vec<ModelResponse>,
}

fn backoff_ms(policy: &str, attempt: u32) -> u64 {
    const BASE_MS: u64 = 100;
    if policy.starts_with("exp") {
        BASE_MS << attempt.min(16)
    } else {
        BASE_MS
    }
}

impl PhaseRun<'_, '_> {
    fn emit(&mut self, kind: EventKind, name: &str, attributes: BTreeMap<String, Value>) {
        let t = &self.st.contract.telemetry_spec;
        let Some(sink) = self.rt.sink else { return };
        if !t.events_enabled {
            return;
        }
        let ev = TelemetryEvent {
            trace_id: self.st.tracer.trace_id().to_string(),
            kind,
            name: format!("{}|{name}", self.phase.key()),
            at_unix_ms: self.rt.clock.now_ms(),
            attributes,
        };
        let rate = t.sampling_rate.clamp(0.0, 1.0);
        if sample_event(&ev, rate, &mut self.st.rng).unwrap_or(true) {
            // Sink failures must not change the run; the trace file is best effort.
            let _ = sink.append(&SinkRecord::Event(ev));
        }
    }

    fn begin(&mut self, action: &str) -> SpanHandle {
        self.st.tracer.begin_span(self.phase.key(), action, self.rt.clock)
    }

    fn end(&mut self, h: &SpanHandle, attributes: BTreeMap<String, Value>) {
        if let Ok(span) = self.st.tracer.end_span_with(h, self.rt.clock, attributes) {
            if let Some(sink) = self.rt.sink {
                let _ = sink.append(&SinkRecord::Span(span));
            }
        }
    }

    fn fail(&mut self, kind: &str, message: String) {
        self.st.failures.push(FailureRecord {
            phase: self.phase.key().to_string(),
            kind: kind.to_string(),
            message: message.clone(),
        });
        let mut a = BTreeMap::new();
        a.insert("kind".to_string(), Value::from(kind));
        a.insert("message".to_string(), Value::from(message));
        self.emit(EventKind::Failure, "failure", a);
    }

    fn request(&self) -> ModelRequest {
        let st = &*self.st;
        let c = &st.contract;
        let mp = &c.model_profile;
        let chained = c.memory_spec.strategy.chains_responses();
        let context = match self.phase {
            Phase::Analysis => match &st.options.goal {
                Some(g) => format!("goal: {g}\n{}", st.context),
                None => st.context.clone(),
            },
            Phase::Plan if !st.revise_notes.is_empty() => {
                format!("{}\nrevise:\n- {}", st.last_text, st.revise_notes.join("\n- "))
            }
            _ => st.last_text.clone(),
        };
        let context = if chained || self.phase == Phase::Analysis {
            context
        } else {
            format!("{}\n{context}", st.context)
        };
        ModelRequest {
            phase: self.phase,
            instructions: phase_instructions(c, self.phase),
            context,
            previous_response_id: if chained { st.previous_response_id.clone() } else { None },
            reasoning_effort: if st.budget_state.knob_state.reasoning_downgraded {
                mp.reasoning_effort.downgrade()
            } else {
                mp.reasoning_effort
            },
            verbosity: if st.verbosity_forced_low { Level::Low } else { mp.verbosity_default },
            temperature: mp.temperature,
            seed: mp.seed,
            tool_allowance: st.budget_state.tool_budget,
            max_output_tokens: Some(st.budget_state.token_budget),
            use_web: c.switches.use_web_search && !st.budget_state.knob_state.web_dropped,
        }
    }

    fn invoke(&mut self, req: &ModelRequest) -> Result<ModelResponse, Halt> {
        let rt = self.rt;
        let runtime = self.st.contract.connectors.runtime.clone();
        let attempts = runtime.retry + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            let span = self.begin("invoke");
            let result = rt.backend.invoke(req);
            let mut attrs = BTreeMap::new();
            attrs.insert("attempt".to_string(), Value::from(attempt));
            match result {
                Ok(resp) => {
                    attrs.insert("response_id".into(), Value::from(resp.response_id.clone()));
                    attrs.insert("tokens".into(), Value::from(resp.response_tokens));
                    attrs.insert("cost".into(), Value::from(resp.response_cost));
                    attrs.insert("latency_ms".into(), Value::from(resp.response_time_ms));
                    rt.clock.advance(resp.response_time_ms);
                    self.end(&span, attrs);
                    return Ok(resp);
                }
                Err(e) => {
                    attrs.insert("error".into(), Value::from(e.to_string()));
                    self.end(&span, attrs);
                    last = e.to_string();
                    self.fail("backend", last.clone());
                    if attempt + 1 < attempts {
                        rt.clock.sleep(backoff_ms(&runtime.backoff, attempt));
                    }
                }
            }
        }
        Err(Halt::Abort(last))
    }

    /// Charges a reply to the ledger and threads its id into the chain.
    fn record(&mut self, resp: &ModelResponse, chain: bool) -> Result<(), Halt> {
        let delta = SpendDelta {
            tokens: resp.response_tokens as i64,
            cost_usd: resp.response_cost,
            wall_ms: resp.response_time_ms,
            tool_calls: resp.tool_calls.len() as i64,
        };
        let next = budget::record_spend(&self.st.budget_state, delta).map_err(|e| Halt::Abort(e.to_string()))?;
        self.st.budget_state = next;
        self.st.spend = self.st.budget_state.spend;
        if chain {
            self.st.previous_response_id = Some(resp.response_id.clone());
        }
        let mut a = BTreeMap::new();
        a.insert("response_id".to_string(), Value::from(resp.response_id.clone()));
        a.insert("response_tokens".to_string(), Value::from(resp.response_tokens));
        a.insert("response_cost".to_string(), Value::from(resp.response_cost));
        a.insert("response_time_ms".to_string(), Value::from(resp.response_time_ms));
        self.emit(EventKind::Info, "response", a);
        Ok(())
    }

    fn guard(&mut self, resp: &ModelResponse, confirmable: bool) -> Result<(), Halt> {
        let span = self.begin("guardrails");
        let st = &*self.st;
        let approved = |t: &str| !confirmable || st.auto_approve || st.approved_tools.contains(t);
        let decision = check_guardrails(&st.contract, &st.spend, st.guard_context(), resp, &approved);
        let mut attrs = BTreeMap::new();
        attrs.insert(
            "decision".to_string(),
            serde_json::to_value(&decision).unwrap_or(Value::Null),
        );
        self.end(&span, attrs);
        // Auto-approved destructive tools are remembered and reported.
        if confirmable && self.st.auto_approve {
            for t in &resp.tool_calls {
                if self.st.contract.guardrails.is_destructive(&t.name) && self.st.approved_tools.insert(t.name.clone()) {
                    let mut a = BTreeMap::new();
                    a.insert("tool".to_string(), Value::from(t.name.clone()));
                    self.emit(EventKind::Info, "confirmation_auto_approved", a);
                }
            }
        }
        let budget = &self.st.contract.budget;
        match decision {
            GuardrailDecision::Continue => Ok(()),
            GuardrailDecision::StopCost => Err(Halt::Stop(
                Outcome::StoppedCost,
                format!(
                    "cost overrun: {} > {} x {}",
                    self.st.spend.cost_usd, budget.cost_budget_tokens, self.st.options.price_per_token
                ),
            )),
            GuardrailDecision::StopLatencyPartial => {
                let outcome = if self.st.partial_allowed() { Outcome::Partial } else { Outcome::StoppedLatency };
                Err(Halt::Stop(
                    outcome,
                    format!("latency overrun: {} ms > {} ms", self.st.spend.wall_ms, budget.latency_budget_ms),
                ))
            }
            GuardrailDecision::RequireConfirmation(tool) => Err(Halt::Confirm(tool)),
        }
    }

    /// Main-chain call: replayed after a confirmation, otherwise invoked
    /// with retry and charged.
    fn call(&mut self, req: &ModelRequest) -> Result<ModelResponse, Halt> {
        let resp = match self.replay.pop_front() {
            Some(r) => r,
            None => {
                let r = self.invoke(req)?;
                self.record(&r, true)?;
                r
            }
        };
        self.received.push(resp.clone());
        self.guard(&resp, true)?;
        Ok(resp)
    }

    /// Side call made by another module (checklist, fallback).
    fn absorb(&mut self, resp: &ModelResponse, chain: bool) -> Result<(), Halt> {
        self.rt.clock.advance(resp.response_time_ms);
        self.record(resp, chain)?;
        self.guard(resp, false)
    }

    fn maybe_fallback(&mut self, economy: bool) -> Result<(), Halt> {
        let spec = self.st.contract.fallback.clone();
        let bundle = ContextBundle::new(self.st.context.clone());
        let decision = fallback::should_trigger(&bundle, economy, &spec);
        if !decision.fire {
            return Ok(());
        }
        let span = self.begin("fallback");
        let mut template = self.request();
        template.previous_response_id = None;
        let query = self
            .st
            .options
            .goal
            .clone()
            .or_else(|| self.st.goal_rewrite.clone())
            .unwrap_or_else(|| self.st.context.lines().next().unwrap_or_default().to_string());
        let env = CascadeEnv {
            backend: self.rt.backend,
            template,
            embedder: self.rt.embedder,
            cache: self.rt.cache,
            query: &query,
            stats_probe: None,
            opts: StageOptions {
                mode: self.rt.mode,
                map_width: self.st.contract.model_profile.parallel_batches.max(1) as usize,
            },
        };
        let out = fallback::run_cascade(&bundle, &spec, &env);
        let mut attrs = BTreeMap::new();
        attrs.insert("action_taken".to_string(), serde_json::to_value(out.action_taken).unwrap_or(Value::Null));
        attrs.insert("confidence".to_string(), Value::from(out.confidence));
        attrs.insert(
            "reasons".to_string(),
            serde_json::to_value(&decision.reasons).unwrap_or(Value::Null),
        );
        self.end(&span, attrs.clone());
        self.emit(EventKind::Info, "fallback", attrs);
        self.st.context = out.resulting_context.clone();
        if out.action_taken == ActionTaken::Partial {
            self.st.partial_context = true;
        }
        let responses = out.responses.clone();
        self.st.fallback = Some(out);
        for r in &responses {
            self.absorb(r, false)?;
        }
        Ok(())
    }

    fn body(&mut self) -> Result<Transition, Halt> {
        if self.replay.is_empty() {
            if self.phase == Phase::Analysis && self.st.phase_records.is_empty() {
                self.maybe_fallback(false)?;
            } else if self.st.economy_fallback_pending {
                self.st.economy_fallback_pending = false;
                self.maybe_fallback(true)?;
            }
        }
        match self.phase {
            Phase::Analysis => self.analysis(),
            Phase::Plan => self.plan(),
            Phase::Execution => self.execution(),
            Phase::Validation => self.validation(),
            Phase::Review => self.review(),
            Phase::Handoff => self.handoff(),
            Phase::Changelog => self.changelog(),
        }
    }

    fn analysis(&mut self) -> Result<Transition, Halt> {
        let resp = self.call(&self.request())?;
        let goal = text(resp.field("goal_rewrite")).unwrap_or_else(|| resp.text.clone());
        let goal = goal.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or_default().to_string();
        self.st.goal_rewrite = Some(goal.clone());
        self.st.last_text = resp.text.clone();
        Ok(Transition::to(
            Phase::Plan,
            json!({
                "goal_rewrite": goal,
                "eagerness": self.st.contract.eagerness().as_str(),
                "missing_info": strings(resp.field("missing_info")),
                "response_id": resp.response_id,
            }),
        ))
    }

    fn plan(&mut self) -> Result<Transition, Halt> {
        let resp = self.call(&self.request())?;
        let mut steps = strings(resp.field("plan_steps"));
        if steps.is_empty() {
            steps = resp.text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
        }
        self.st.revise_notes.clear();
        self.st.last_text = resp.text.clone();
        Ok(Transition::to(
            Phase::Execution,
            json!({ "plan_steps": steps, "round": self.st.rounds_used, "response_id": resp.response_id }),
        ))
    }

    fn execution(&mut self) -> Result<Transition, Halt> {
        let resp = self.call(&self.request())?;
        let g = &self.st.contract.guardrails;
        let tools: Vec<Value> = resp
            .tool_calls
            .iter()
            .map(|t| {
                let status = if t.optional && self.st.skip_optional_tools {
                    "skipped"
                } else if g.is_destructive(&t.name) {
                    "confirmed"
                } else {
                    "executed"
                };
                json!({ "name": t.name, "optional": t.optional, "status": status })
            })
            .collect();
        let diffs = strings(resp.field("diffs"));
        self.st.diffs.extend(diffs.iter().cloned());
        self.st.last_text = resp.text.clone();
        Ok(Transition::to(
            Phase::Validation,
            json!({
                "tool_calls": tools,
                // Batching is recorded; tools run one after another.
                "parallel_batches": self.st.contract.model_profile.parallel_batches,
                "diffs": diffs,
                "response_id": resp.response_id,
            }),
        ))
    }

    fn evaluate(&self, resp: &ModelResponse, tag: &str) -> Result<hygiene::Evaluation, Halt> {
        let c = &self.st.contract;
        let direct: BTreeMap<String, f64> = match resp.field("scores") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| Halt::Abort(format!("validation scores: {e}")))?,
            None => return Err(Halt::Abort("validation payload has no scores".into())),
        };
        let util = hygiene::efficiency_utilization(&self.st.spend, &c.budget);
        let card = hygiene::build_scorecard(&c.scoring, &direct, util, tag).map_err(|e| Halt::Abort(e.to_string()))?;
        let weighted = hygiene::weighted_score(&card, &c.scoring).map_err(|e| Halt::Abort(e.to_string()))?;
        Ok(hygiene::Evaluation { card, weighted })
    }

    fn validation(&mut self) -> Result<Transition, Halt> {
        let req = self.request();
        let resp = self.call(&req)?;
        let eval_a = self.evaluate(&resp, "A")?;
        let noise = if self.st.options.double_evaluation {
            let mut second = req.clone();
            second.instructions.push_str("[second independent evaluation]\n");
            second.previous_response_id = self.st.previous_response_id.clone();
            let resp_b = self.call(&second)?;
            let eval_b = self.evaluate(&resp_b, "B")?;
            Some(hygiene::noise_index(&eval_a, &eval_b).map_err(|e| Halt::Abort(e.to_string()))?)
        } else {
            None
        };
        let span = self.begin("apply_gates");
        let scoring = self.st.contract.scoring.clone();
        let gates = hygiene::apply_gates(&eval_a.card, &scoring.gates).map_err(|e| Halt::Abort(e.to_string()))?;
        self.end(&span, BTreeMap::new());

        let payload = ChecklistPayload::from_structured(resp.structured.as_ref()).unwrap_or_default();
        let checklist = if payload.is_present() {
            hygiene::evaluate_checklist(&payload, &scoring.checklist)
        } else {
            let mut creq = self.request();
            creq.instructions = checklist_instructions(&self.st.contract);
            let run = hygiene::run_counterfactuals_and_probes(&resp.text, creq, self.rt.backend, &scoring.checklist);
            if let Some(r) = &run.response {
                self.absorb(r, true)?;
            }
            run.report
        };
        for f in &checklist.failures {
            self.fail("checklist", f.clone());
        }

        let parse = |key: &str| resp.field(key).cloned().unwrap_or(Value::Array(vec![]));
        let docket: Vec<EvidenceItem> =
            serde_json::from_value(parse("evidence")).map_err(|e| Halt::Abort(format!("evidence docket: {e}")))?;
        let derivation: Vec<hygiene::DerivationLink> =
            serde_json::from_value(parse("derivation")).map_err(|e| Halt::Abort(format!("derivation: {e}")))?;
        let assumptions: Vec<hygiene::Assumption> =
            serde_json::from_value(parse("assumptions")).map_err(|e| Halt::Abort(format!("assumptions: {e}")))?;
        hygiene::check_docket(&docket).map_err(|e| Halt::Abort(e.to_string()))?;
        hygiene::check_register(&assumptions).map_err(|e| Halt::Abort(e.to_string()))?;
        let alignment = hygiene::check_evidence_alignment(
            &docket,
            &derivation,
            &strings(resp.field("key_assertions")),
            text(resp.field("consistency")).as_deref(),
        )
        .map_err(|e| Halt::Abort(e.to_string()))?;

        let c = &self.st.contract;
        let verdict = hygiene::decide_verdict(
            &gates,
            eval_a.weighted,
            self.st.rounds_used,
            c.connectors.max_rounds,
            c.budget.min_quality,
        );
        let metrics = hygiene::export_metrics(&ExportInputs {
            card: &eval_a.card,
            spec: &scoring,
            gates_status: &gates,
            weighted: eval_a.weighted,
            verdict,
            min_quality: c.budget.min_quality,
            checklist: Some(&checklist),
            docket: &docket,
            spend: &self.st.spend,
            noise: noise.as_ref(),
        });
        for g in &scoring.gates {
            if gates.get(&g.id) == Some(&GateStatus::Fail) {
                let mut a = BTreeMap::new();
                a.insert("gate".to_string(), Value::from(g.id.clone()));
                a.insert("score".to_string(), Value::from(eval_a.card.scores[&g.id]));
                a.insert("min_score".to_string(), Value::from(g.min_score));
                self.emit(EventKind::GateFailure, "gate_failure", a);
                self.st.failures.push(FailureRecord {
                    phase: self.phase.key().to_string(),
                    kind: "gate".into(),
                    message: format!("{} below {}", g.id, g.min_score),
                });
            }
        }
        let artifacts = json!({
            "scores": eval_a.card.scores,
            "weighted_score": eval_a.weighted,
            "gates_status": gates,
            "verdict": verdict,
            "checklist": checklist,
            "alignment": alignment,
            "assumptions": assumptions,
            "noise": noise,
            "round": self.st.rounds_used,
            "response_id": resp.response_id,
        });
        self.st.revise_notes = metrics.actions_required.clone();
        self.st.review = Some(metrics);
        self.st.last_text = resp.text.clone();
        let max_rounds = self.st.contract.connectors.max_rounds;
        Ok(match verdict {
            Verdict::Accept => Transition::to(Phase::Review, artifacts),
            Verdict::Revise if self.st.rounds_used < max_rounds => {
                self.st.rounds_used += 1;
                Transition { next: Some(Phase::Plan), status: PhaseStatus::Revised, artifacts, outcome: None }
            }
            Verdict::Revise => {
                let outcome = if self.st.partial_allowed() { Outcome::Partial } else { Outcome::Rejected };
                Transition { next: None, status: PhaseStatus::Ok, artifacts, outcome: Some(outcome) }
            }
            Verdict::Reject => Transition { next: None, status: PhaseStatus::Ok, artifacts, outcome: Some(Outcome::Rejected) },
        })
    }

    fn review_values(&self, resp: &ModelResponse) -> BTreeMap<&'static str, String> {
        let mut v = BTreeMap::new();
        v.insert("correlation_id", self.st.correlation_id.clone());
        v.insert("response_id", resp.response_id.clone());
        v.insert("response_time_ms", resp.response_time_ms.to_string());
        v.insert("response_tokens", resp.response_tokens.to_string());
        v.insert("response_cost", resp.response_cost.to_string());
        v
    }

    fn review(&mut self) -> Result<Transition, Halt> {
        let mut resp = self.call(&self.request())?;
        let span = self.begin("adaptive_actions");
        let actions = triggered_actions(&self.st.contract, &self.st.spend, &self.st.fired_actions);
        self.end(&span, BTreeMap::new());
        for &a in &actions {
            self.st.fired_actions.push(a);
            let mut attrs = BTreeMap::new();
            attrs.insert("action".to_string(), Value::from(a.as_str()));
            self.emit(EventKind::Info, "adaptive_action", attrs);
            match a {
                AdaptiveAction::LowerVerbosityAndRetry => {
                    self.st.verbosity_forced_low = true;
                    resp = self.call(&self.request())?;
                }
                AdaptiveAction::SkipNonCriticalTools => self.st.skip_optional_tools = true,
                // Review already hands off next; the action only stops further searching.
                AdaptiveAction::CollapseSearchPathsAndFinalize => {}
            }
        }
        let values = self.review_values(&resp);
        let metrics: BTreeMap<String, String> = self
            .st
            .contract
            .phases
            .review
            .metrics
            .iter()
            .map(|(k, t)| (k.clone(), fill_template(t, &values)))
            .collect();
        self.st.last_text = resp.text.clone();
        Ok(Transition::to(
            Phase::Handoff,
            json!({
                "metrics": metrics,
                "adaptive_actions": actions,
                "catalog_id": self.st.contract.phases.review.catalog_id,
                "response_id": resp.response_id,
            }),
        ))
    }

    fn handoff(&mut self) -> Result<Transition, Halt> {
        let resp = self.call(&self.request())?;
        let mut payload = resp.structured.clone().unwrap_or_else(|| json!({}));
        if payload.get("summary").is_none() {
            payload["summary"] = Value::from(resp.text.clone());
        }
        self.st.handoff_payload = Some(payload);
        let span = self.begin("finalize");
        let bundle = finalize(self.st);
        self.end(&span, BTreeMap::new());
        self.st.handoff = Some(bundle.clone());
        self.st.last_text = bundle.summary.clone();
        Ok(Transition::to(
            Phase::Changelog,
            json!({ "bundle": bundle, "response_id": resp.response_id }),
        ))
    }

    fn changelog(&mut self) -> Result<Transition, Halt> {
        let resp = self.call(&self.request())?;
        let change = text(resp.field("change"))
            .or_else(|| resp.text.lines().map(str::trim).find(|l| !l.is_empty()).map(String::from))
            .unwrap_or_else(|| "run completed".to_string());
        let entry = ChangelogEntry { timestamp: rfc3339(self.rt.clock.now_ms()), change };
        let rendered = entry.render(&self.st.contract.phases.changelog_format);
        self.st.changelog.push(entry);
        let partial = (self.st.safe_stop_occurred || self.st.partial_context) && self.st.partial_allowed();
        let outcome = if partial { Outcome::Partial } else { Outcome::Completed };
        self.st.outcome = Some(outcome);
        self.st.handoff = Some(finalize(self.st));
        Ok(Transition {
            next: None,
            status: PhaseStatus::Ok,
            artifacts: json!({ "entry": rendered, "response_id": resp.response_id }),
            outcome: Some(outcome),
        })
    }
}

/// Assembles the handoff bundle from the run so far.
pub fn finalize(state: &RunState) -> HandoffBundle {
    let c = &state.contract;
    let export = c.switches.produce_review_export && c.phases.review.export;
    let rejected = state.outcome == Some(Outcome::Rejected);
    let partial = state.outcome == Some(Outcome::Partial)
        || (state.outcome.is_some() && state.outcome != Some(Outcome::Completed) && !rejected)
        || state.safe_stop_occurred
        || state.partial_context;
    let p = state.handoff_payload.as_ref();
    let field = |k: &str| p.and_then(|v| v.get(k));
    let done: Vec<&str> = state.phase_records.iter().map(|r| r.phase.key()).collect();
    let summary = if rejected {
        "Delivery withheld: verdict reject.".to_string()
    } else {
        text(field("summary")).unwrap_or_else(|| {
            format!(
                "Phases run: {}. Outcome: {}.",
                if done.is_empty() { "none".to_string() } else { done.join(", ") },
                state.outcome.map(Outcome::as_str).unwrap_or("in progress")
            )
        })
    };
    let mut assumptions = strings(field("assumptions"));
    if assumptions.is_empty() {
        assumptions = c.scope.assumptions.clone();
    }
    let mut limitations = strings(field("limitations"));
    if partial {
        limitations.push(fallback::LIMITATIONS_NOTE.to_string());
    }
    if let Some(f) = &state.fallback {
        if !f.notes.is_empty() {
            limitations.push(f.notes.clone());
        }
    }
    let mut diffs = Vec::new();
    if !rejected {
        diffs.extend(state.diffs.iter().cloned());
        diffs.extend(strings(field("diffs")));
    }
    let review_metrics = state.review.clone().filter(|_| export).map(|mut m| {
        m.telemetry_brief = (&state.spend).into();
        m
    });
    HandoffBundle {
        partial,
        summary,
        assumptions,
        limitations,
        next_steps: strings(field("next_steps")),
        diffs,
        application_instructions: if rejected { None } else { text(field("application_instructions")) },
        review_metrics,
        telemetry_brief: export.then(|| (&state.spend).into()),
        changelog: state
            .changelog
            .iter()
            .map(|e| e.render(&c.phases.changelog_format))
            .collect(),
    }
}

/// Closes a run that ended before the changelog phase: one changelog line,
/// then the bundle. Makes no backend calls.
fn finalize_local(st: &mut RunState, clock: &dyn Clock, outcome: Outcome, reason: &str) {
    st.outcome = Some(outcome);
    st.current_phase = None;
    st.changelog.push(ChangelogEntry {
        timestamp: rfc3339(clock.now_ms()),
        change: format!("run ended {}: {reason}", outcome.as_str()),
    });
    st.handoff = Some(finalize(st));
}

/// Executes exactly one phase.
pub fn advance(state: &mut RunState, rt: &Runtime<'_>) -> Result<PhaseOutcome, EngineError> {
    let phase = state.current_phase.ok_or(EngineError::Terminated)?;
    if let Some(t) = &state.pending_confirmation {
        return Err(EngineError::AwaitingConfirmation(t.clone()));
    }
    let (started_ms, span_id, replay) = match state.suspended.take() {
        Some(s) => (s.started_ms, s.span_id, VecDeque::from(s.responses)),
        None => {
            let h = state.tracer.begin_span(phase.key(), "phase", rt.clock);
            (rt.clock.now_ms(), h.span_id().to_string(), VecDeque::new())
        }
    };
    let mut run = PhaseRun { st: state, rt, phase, replay, received: Vec::new() };
    let result = run.body();

    let (transition, halt_reason) = match result {
        Ok(t) => (t, None),
        Err(Halt::Confirm(tool)) => {
            let mut a = BTreeMap::new();
            a.insert("tool".to_string(), Value::from(tool.clone()));
            run.emit(EventKind::Failure, "confirmation_required", a);
            let responses = std::mem::take(&mut run.received);
            state.suspended = Some(Suspended { responses, started_ms, span_id });
            state.pending_confirmation = Some(tool);
            state.outcome = Some(Outcome::AwaitingConfirmation);
            return Ok(PhaseOutcome { phase, status: None, next: Some(phase), outcome: state.outcome });
        }
        Err(Halt::Stop(outcome, reason)) => {
            run.fail("guardrail", reason.clone());
            let t = Transition {
                next: None,
                status: PhaseStatus::Aborted,
                artifacts: json!({ "stop": reason }),
                outcome: Some(outcome),
            };
            (t, Some(reason))
        }
        Err(Halt::Abort(msg)) => {
            let t = Transition {
                next: None,
                status: PhaseStatus::Aborted,
                artifacts: json!({ "error": msg }),
                outcome: Some(Outcome::Failed),
            };
            (t, Some(msg))
        }
    };
    let mut transition = transition;
    let last = run.received.last().cloned();

    // Spend guard, then the budget controller.
    if transition.outcome.is_none() && state.contract.budget.enabled {
        if let Ok(status) = budget::guard_status(&state.spend, &state.contract.budget) {
            state.mode = state.mode.max(status);
            match status {
                GuardStatus::SafeStop => {
                    state.safe_stop_occurred = true;
                    let outcome = if state.partial_allowed() {
                        Outcome::Partial
                    } else if state.spend.cost_usd / state.contract.budget.target_cost_usd
                        >= state.spend.wall_ms / state.contract.budget.target_latency_ms
                    {
                        Outcome::StoppedCost
                    } else {
                        Outcome::StoppedLatency
                    };
                    transition.next = None;
                    transition.outcome = Some(outcome);
                }
                GuardStatus::Economy => {
                    let (next, changes) = budget::apply_economy_knobs(
                        &state.budget_state,
                        &state.contract.budget,
                        state.contract.model_profile.reasoning_effort,
                    );
                    state.budget_state = next;
                    if !changes.is_empty() && state.contract.fallback.trigger_economy {
                        state.economy_fallback_pending = true;
                    }
                }
                GuardStatus::Normal => {}
            }
        }
    }
    let mut run = PhaseRun { st: state, rt, phase, replay: VecDeque::new(), received: Vec::new() };
    if phase.adjusts_budget() && transition.outcome.is_none() && run.st.contract.budget.enabled {
        let span = run.begin("budget_adjust");
        let mus = last
            .as_ref()
            .and_then(|r| r.uncertainty_mus.or_else(|| budget::default_mus(None, r.confidence())));
        if let Some(m) = mus {
            match budget::update_ema(&run.st.budget_state, m, run.st.contract.budget.ema_alpha) {
                Ok(s) => run.st.budget_state = s,
                Err(e) => run.fail("budget", e.to_string()),
            }
        }
        let (next, event) = budget::adjust(&run.st.budget_state, &run.st.contract.budget);
        run.st.budget_state = next;
        let mut attrs = BTreeMap::new();
        if let Some(ev) = event {
            attrs.insert("direction".to_string(), Value::from(ev.direction.as_str()));
            attrs.insert("token_budget".to_string(), Value::from(ev.token_budget_after));
            attrs.insert("tool_budget".to_string(), Value::from(ev.tool_budget_after));
            run.emit(EventKind::Info, "budget_adjust", attrs.clone());
            run.st.adjust_log.push(ev);
        }
        run.end(&span, attrs);
    }
    let state = run.st;

    let ended_ms = rt.clock.now_ms();
    state.phase_records.push(PhaseRecord {
        phase,
        started_at: rfc3339(started_ms),
        ended_at: rfc3339(ended_ms),
        status: transition.status,
        artifacts: transition.artifacts,
        spend: state.spend,
    });
    let mut attrs = BTreeMap::new();
    attrs.insert("status".to_string(), serde_json::to_value(transition.status).unwrap_or(Value::Null));
    attrs.insert("tokens".to_string(), Value::from(state.spend.tokens_used));
    attrs.insert("cost".to_string(), Value::from(state.spend.cost_usd));
    attrs.insert("latency_ms".to_string(), Value::from(state.spend.wall_ms));
    if let Ok(span) = state.tracer.end_span_with(&SpanHandle::from_id(span_id), rt.clock, attrs) {
        if let Some(sink) = rt.sink {
            sink.append(&SinkRecord::Span(span))?;
        }
    }

    match transition.outcome {
        Some(outcome) if phase != Phase::Changelog || halt_reason.is_some() => {
            let reason = halt_reason.unwrap_or_else(|| match outcome {
                Outcome::Rejected => "verdict reject".to_string(),
                Outcome::Partial if state.safe_stop_occurred => "spend reached the hard guard".to_string(),
                Outcome::Partial => "revise rounds exhausted".to_string(),
                other => other.as_str().to_string(),
            });
            finalize_local(state, rt.clock, outcome, &reason);
        }
        Some(_) => state.current_phase = None,
        None => state.current_phase = transition.next,
    }
    Ok(PhaseOutcome {
        phase,
        status: Some(transition.status),
        next: state.current_phase,
        outcome: state.outcome,
    })
}

/// Advances until the run terminates or suspends.
pub fn run_to_end(state: &mut RunState, rt: &Runtime<'_>) -> Result<Outcome, EngineError> {
    while !state.is_terminated() && state.pending_confirmation.is_none() {
        advance(state, rt)?;
    }
    Ok(state.outcome.unwrap_or(Outcome::Failed))
}

/// Lifts a confirmation suspension. The next `advance` finishes the
/// suspended phase without repeating its backend calls.
pub fn resume(state: &mut RunState, token: &ApprovalToken) -> Result<(), EngineError> {
    let pending = state.pending_confirmation.as_ref().ok_or(EngineError::NotAwaiting)?;
    if token.correlation_id != state.correlation_id || &token.tool != pending {
        return Err(EngineError::ApprovalMismatch);
    }
    state.approved_tools.insert(token.tool.clone());
    state.pending_confirmation = None;
    state.outcome = None;
    Ok(())
}

/// Adaptive actions that would fire now; see [`triggered_actions`].
pub fn evaluate_adaptive_actions(state: &RunState) -> Vec<AdaptiveAction> {
    triggered_actions(&state.contract, &state.spend, &state.fired_actions)
}

/// Metrics export with every section; render with the contract's include
/// list to write it.
pub fn metrics_export(state: &RunState) -> MetricsExport {
    MetricsExport {
        review_rubric: state.review.clone().map(|mut m| {
            m.telemetry_brief = (&state.spend).into();
            m
        }),
        telemetry_brief: (&state.spend).into(),
        failures: state.failures.clone(),
        budget_adjust_log: state.adjust_log.clone(),
    }
}

/// Run result document.
pub fn run_result(state: &RunState) -> Value {
    let c = &state.contract;
    json!({
        "correlation_id": state.correlation_id,
        "contract": {
            "root": c.root_key,
            "version": c.version,
            "profile": c.resolved_profile.map(|p| p.as_str()),
        },
        "outcome": state.outcome,
        "exit_code": state.outcome.map(Outcome::exit_code),
        "current_phase": state.current_phase,
        "rounds_used": state.rounds_used,
        "mode": state.mode,
        "spend": state.spend,
        "budget": {
            "token_budget": state.budget_state.token_budget,
            "tool_budget": state.budget_state.tool_budget,
            "ema_mus": state.budget_state.ema_mus,
            "knobs": state.budget_state.knob_state,
        },
        "phase_records": state.phase_records,
        "handoff": state.handoff,
        "changelog": state
            .changelog
            .iter()
            .map(|e| e.render(&c.phases.changelog_format))
            .collect::<Vec<_>>(),
        "pending_confirmation": state.pending_confirmation,
        "adaptive_actions": state.fired_actions,
        "fallback": state.fallback,
        "failures": state.failures,
        "options": state.options,
    })
}
