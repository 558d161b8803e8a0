//! Adaptive budget controller.
//!
//! MUS samples are smoothed with an EMA; the token and tool budgets heat up
//! above `mus_heat` and cool down below `mus_cool`, subject to hysteresis
//! around the EMA at the last adjustment and a cooldown counter. Spend is
//! tracked separately and classified into normal, economy and safe-stop.

use serde::{Deserialize, Serialize};

use crate::contract::{BudgetSpec, Level};
use crate::exec::{self, ExecMode};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BudgetError {
    #[error("mus sample {0} outside [0, 100]")]
    SampleOutOfRange(f64),
    #[error("negative {0} delta")]
    NegativeDelta(&'static str),
    #[error("non-positive target: {0}")]
    NonPositiveTarget(&'static str),
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<BudgetError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpendLedger {
    pub tokens_used: u64,
    pub cost_usd: f64,
    pub wall_ms: f64,
    pub tool_calls: u64,
}

/// Signed increments so that bad input can be rejected rather than wrapped.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpendDelta {
    pub tokens: i64,
    pub cost_usd: f64,
    pub wall_ms: f64,
    pub tool_calls: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KnobState {
    pub web_dropped: bool,
    pub reasoning_downgraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetState {
    pub ema_mus: Option<f64>,
    pub token_budget: u32,
    pub tool_budget: u32,
    pub cooldown_remaining: u32,
    pub ema_at_last_adjust: Option<f64>,
    pub spend: SpendLedger,
    pub knob_state: KnobState,
    /// Number of `adjust` calls so far.
    pub steps: u64,
}

impl BudgetState {
    pub fn new(spec: &BudgetSpec, tool_call_budget_max: u32) -> Self {
        Self {
            ema_mus: None,
            token_budget: spec.cost_budget_tokens.clamp(1, spec.max_tokens_cap.max(1)),
            tool_budget: tool_call_budget_max.clamp(1, spec.max_tools_cap.max(1)),
            cooldown_remaining: 0,
            ema_at_last_adjust: None,
            spend: SpendLedger::default(),
            knob_state: KnobState::default(),
            steps: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Heat,
    Cool,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Heat => "heat",
            Direction::Cool => "cool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentEvent {
    pub step_index: u64,
    pub direction: Direction,
    pub token_budget_before: u32,
    pub token_budget_after: u32,
    pub tool_budget_before: u32,
    pub tool_budget_after: u32,
    pub ema_value: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardStatus {
    Normal,
    Economy,
    SafeStop,
}

impl GuardStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            GuardStatus::Normal => "normal",
            GuardStatus::Economy => "economy",
            GuardStatus::SafeStop => "safe_stop",
        }
    }
}

fn check_sample(mus: f64) -> Result<(), BudgetError> {
    if (0.0..=100.0).contains(&mus) {
        Ok(())
    } else {
        Err(BudgetError::SampleOutOfRange(mus))
    }
}

pub fn update_ema(state: &BudgetState, mus_sample: f64, alpha: f64) -> Result<BudgetState, BudgetError> {
    check_sample(mus_sample)?;
    let mut next = state.clone();
    next.ema_mus = Some(match state.ema_mus {
        None => mus_sample,
        Some(ema) => alpha * mus_sample + (1.0 - alpha) * ema,
    });
    Ok(next)
}

fn round_half_up(x: f64) -> u32 {
    let r = (x + 0.5).floor();
    if r <= 0.0 {
        0
    } else if r >= u32::MAX as f64 {
        u32::MAX
    } else {
        r as u32
    }
}

fn hysteresis_ok(ema: f64, anchor: Option<f64>, pct: f64) -> bool {
    match anchor {
        None => true,
        Some(a) => (ema - a).abs() / a.max(1.0) >= pct,
    }
}

/// One controller step. Call once per phase transition after `update_ema`.
pub fn adjust(state: &BudgetState, spec: &BudgetSpec) -> (BudgetState, Option<AdjustmentEvent>) {
    let mut next = state.clone();
    next.steps += 1;
    let step_index = state.steps;
    if next.cooldown_remaining > 0 {
        next.cooldown_remaining -= 1;
        return (next, None);
    }
    let Some(ema) = state.ema_mus else {
        return (next, None);
    };
    if !hysteresis_ok(ema, state.ema_at_last_adjust, spec.hysteresis_pct) {
        return (next, None);
    }
    let tokens_cap = spec.max_tokens_cap.max(1);
    let tools_cap = spec.max_tools_cap.max(1);
    let (direction, tokens, tools, reason) = if ema > spec.mus_heat {
        (
            Direction::Heat,
            round_half_up(state.token_budget as f64 * (1.0 + spec.tokens_up_pct)).min(tokens_cap),
            state.tool_budget.saturating_add(spec.tool_step).min(tools_cap),
            format!("ema {ema:.3} > mus_heat {}", spec.mus_heat),
        )
    } else if ema < spec.mus_cool {
        (
            Direction::Cool,
            round_half_up(state.token_budget as f64 * (1.0 - spec.tokens_down_pct)).max(1),
            state.tool_budget.saturating_sub(spec.tool_step).max(1),
            format!("ema {ema:.3} < mus_cool {}", spec.mus_cool),
        )
    } else {
        return (next, None);
    };
    next.token_budget = tokens.clamp(1, tokens_cap);
    next.tool_budget = tools.clamp(1, tools_cap);
    next.cooldown_remaining = spec.cooldown_steps;
    next.ema_at_last_adjust = Some(ema);
    let event = AdjustmentEvent {
        step_index,
        direction,
        token_budget_before: state.token_budget,
        token_budget_after: next.token_budget,
        tool_budget_before: state.tool_budget,
        tool_budget_after: next.tool_budget,
        ema_value: ema,
        reason,
    };
    (next, Some(event))
}

/// Largest of the cost and latency spend ratios.
pub fn spend_ratio(spend: &SpendLedger, spec: &BudgetSpec) -> Result<f64, BudgetError> {
    if !(spec.target_cost_usd > 0.0) {
        return Err(BudgetError::NonPositiveTarget("target_cost_usd"));
    }
    if !(spec.target_latency_ms > 0.0) {
        return Err(BudgetError::NonPositiveTarget("target_latency_ms"));
    }
    Ok((spend.cost_usd / spec.target_cost_usd).max(spend.wall_ms / spec.target_latency_ms))
}

pub fn guard_status(spend: &SpendLedger, spec: &BudgetSpec) -> Result<GuardStatus, BudgetError> {
    let ratio = spend_ratio(spend, spec)?;
    Ok(if ratio >= spec.guard_hard_pct {
        GuardStatus::SafeStop
    } else if ratio >= spec.guard_soft_pct {
        GuardStatus::Economy
    } else {
        GuardStatus::Normal
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KnobChange {
    WebSearchDropped,
    ReasoningDowngraded { from: Level, to: Level },
}

/// Economy knobs. Both are sticky: once applied they stay for the run.
pub fn apply_economy_knobs(
    state: &BudgetState,
    spec: &BudgetSpec,
    effort: Level,
) -> (BudgetState, Vec<KnobChange>) {
    let mut next = state.clone();
    let mut changes = Vec::new();
    if spec.allow_use_web_drop && !next.knob_state.web_dropped {
        next.knob_state.web_dropped = true;
        changes.push(KnobChange::WebSearchDropped);
    }
    if spec.allow_reasoning_downgrade && !next.knob_state.reasoning_downgraded {
        next.knob_state.reasoning_downgraded = true;
        changes.push(KnobChange::ReasoningDowngraded {
            from: effort,
            to: effort.downgrade(),
        });
    }
    (next, changes)
}

pub fn record_spend(state: &BudgetState, delta: SpendDelta) -> Result<BudgetState, BudgetError> {
    if delta.tokens < 0 {
        return Err(BudgetError::NegativeDelta("tokens"));
    }
    if !(delta.cost_usd >= 0.0) {
        return Err(BudgetError::NegativeDelta("cost_usd"));
    }
    if !(delta.wall_ms >= 0.0) {
        return Err(BudgetError::NegativeDelta("wall_ms"));
    }
    if delta.tool_calls < 0 {
        return Err(BudgetError::NegativeDelta("tool_calls"));
    }
    let mut next = state.clone();
    let s = &mut next.spend;
    s.tokens_used += delta.tokens as u64;
    s.cost_usd += delta.cost_usd;
    s.wall_ms += delta.wall_ms;
    s.tool_calls += delta.tool_calls as u64;
    Ok(next)
}

/// Non-normative MUS estimate: 50/50 blend of `100·(1 − top1)` and
/// `100·(1 − confidence)`. Either input alone is used as is.
pub fn default_mus(top1_sim: Option<f64>, confidence: Option<f64>) -> Option<f64> {
    let a = top1_sim.map(|s| 100.0 * (1.0 - s.clamp(0.0, 1.0)));
    let b = confidence.map(|c| 100.0 * (1.0 - c.clamp(0.0, 1.0)));
    match (a, b) {
        (Some(a), Some(b)) => Some(0.5 * a + 0.5 * b),
        (x, None) | (None, x) => x,
    }
}

/// One input step for [`simulate`]: a MUS sample plus optional spend.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TraceStep {
    pub mus: f64,
    pub cost_usd: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub mus: f64,
    pub ema: f64,
    pub token_budget: u32,
    pub tool_budget: u32,
    pub mode: GuardStatus,
    pub event: Option<Direction>,
}

/// Replays `update_ema`, `adjust` and `guard_status` over a trace.
pub fn simulate(
    spec: &BudgetSpec,
    tool_call_budget_max: u32,
    trace: &[TraceStep],
) -> Result<(Vec<TrajectoryRow>, Vec<AdjustmentEvent>), BudgetError> {
    let mut state = BudgetState::new(spec, tool_call_budget_max);
    let mut rows = Vec::with_capacity(trace.len());
    let mut events = Vec::new();
    let at = |step: usize| move |e: BudgetError| BudgetError::AtStep { step, source: Box::new(e) };
    for (i, t) in trace.iter().enumerate() {
        state = record_spend(
            &state,
            SpendDelta {
                cost_usd: t.cost_usd,
                wall_ms: t.wall_ms,
                ..Default::default()
            },
        )
        .map_err(at(i))?;
        state = update_ema(&state, t.mus, spec.ema_alpha).map_err(at(i))?;
        let (next, event) = adjust(&state, spec);
        state = next;
        let mode = guard_status(&state.spend, spec).map_err(at(i))?;
        rows.push(TrajectoryRow {
            step: i,
            mus: t.mus,
            ema: state.ema_mus.unwrap_or(t.mus),
            token_budget: state.token_budget,
            tool_budget: state.tool_budget,
            mode,
            event: event.as_ref().map(|e| e.direction),
        });
        events.extend(event);
    }
    Ok((rows, events))
}

/// Simulates many independent traces.
pub fn simulate_batch(
    mode: ExecMode,
    spec: &BudgetSpec,
    tool_call_budget_max: u32,
    traces: &[Vec<TraceStep>],
) -> Vec<Result<(Vec<TrajectoryRow>, Vec<AdjustmentEvent>), BudgetError>> {
    exec::map(mode, traces, |t| simulate(spec, tool_call_budget_max, t))
}
