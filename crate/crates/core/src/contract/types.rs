use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Three-step scale shared by reasoning effort, verbosity and uncertainty
/// thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    #[default]
    Medium,
    High,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Medium => "medium",
            Level::High => "high",
        }
    }

    /// One step down, saturating at `Low`.
    pub fn downgrade(self) -> Level {
        match self {
            Level::High => Level::Medium,
            _ => Level::Low,
        }
    }
}

impl FromStr for Level {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(Level::Low),
            "medium" | "med" => Ok(Level::Medium),
            "high" => Ok(Level::High),
            other => Err(format!("expected low|medium|high, got \"{other}\"")),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eagerness {
    #[default]
    Low,
    High,
}

impl Eagerness {
    pub fn as_str(self) -> &'static str {
        match self {
            Eagerness::Low => "low",
            Eagerness::High => "high",
        }
    }
}

impl FromStr for Eagerness {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(Eagerness::Low),
            "high" => Ok(Eagerness::High),
            other => Err(format!("expected low|high, got \"{other}\"")),
        }
    }
}

/// A numeric parameter that may still be an unresolved template slot such as
/// `"<USD/token_est>"` or `"{{price}}"`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Param {
    Value(f64),
    Slot(String),
}

impl Default for Param {
    fn default() -> Self {
        Param::Value(0.0)
    }
}

impl Param {
    pub fn value(&self) -> Option<f64> {
        match self {
            Param::Value(v) => Some(*v),
            Param::Slot(_) => None,
        }
    }
}

/// Name of a template binding inside `{{...}}`, if `text` is exactly one slot.
pub fn template_slot(text: &str) -> Option<&str> {
    let inner = text.trim().strip_prefix("{{")?.strip_suffix("}}")?;
    let inner = inner.trim();
    (!inner.is_empty() && !inner.contains(['{', '}'])).then_some(inner)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetaBlock {
    pub title: String,
    pub owner: String,
    pub date: String,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ModelProfile {
    pub model_family: String,
    pub reasoning_effort: Level,
    pub verbosity_default: Level,
    pub verbosity_code_blocks: Level,
    pub eagerness_mode: Eagerness,
    pub tool_call_budget_max: u32,
    pub parallel_batches: u32,
    /// `None` means "backend default".
    pub seed: Option<i64>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TelemetrySpec {
    pub capture: bool,
    pub fields: Vec<String>,
    pub trace_standard: String,
    pub trace_id: String,
    pub span_format: String,
    pub events_enabled: bool,
    pub metrics_include: Vec<String>,
    pub pii_redaction: bool,
    pub sampling_rate: f64,
    pub run_logs_ttl_days: u32,
    pub review_exports_ttl_days: u32,
}

pub const TELEMETRY_FIELDS: [&str; 5] = [
    "correlation_id",
    "response_id",
    "response_time_ms",
    "response_tokens",
    "response_cost",
];

pub const METRICS_SECTIONS: [&str; 4] =
    ["review_rubric", "telemetry_brief", "failures", "budget_adjust_log"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryStrategy {
    Off,
    Summaries,
    Rag,
    #[default]
    ResponsesApi,
}

impl MemoryStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            MemoryStrategy::Off => "off",
            MemoryStrategy::Summaries => "summaries",
            MemoryStrategy::Rag => "RAG",
            MemoryStrategy::ResponsesApi => "responses_api",
        }
    }

    /// Only response chaining has runtime semantics; the other strategies
    /// are accepted and logged.
    pub fn chains_responses(self) -> bool {
        self == MemoryStrategy::ResponsesApi
    }
}

impl FromStr for MemoryStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(MemoryStrategy::Off),
            "summaries" => Ok(MemoryStrategy::Summaries),
            "RAG" | "rag" => Ok(MemoryStrategy::Rag),
            "responses_api" => Ok(MemoryStrategy::ResponsesApi),
            other => Err(format!("expected off|summaries|RAG|responses_api, got \"{other}\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MemorySpec {
    pub strategy: MemoryStrategy,
    /// Literal or template slot, kept unresolved until run start.
    pub previous_response_id: Option<String>,
    pub traceability: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    CostOverrun,
    LatencyOverrun,
    DestructiveConfirmation,
    Unrecognized,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StopRule {
    pub kind: StopKind,
    pub text: String,
}

impl StopRule {
    /// Classifies a free-text stop condition by the quantities it mentions.
    pub fn classify(text: &str) -> StopRule {
        let lower = text.to_lowercase();
        let kind = if lower.contains("response_cost") || lower.contains("cost_budget_tokens") {
            StopKind::CostOverrun
        } else if lower.contains("response_time_ms") || lower.contains("latency_budget_ms") {
            StopKind::LatencyOverrun
        } else if lower.contains("confirmation") || lower.contains("irreversible") {
            StopKind::DestructiveConfirmation
        } else {
            StopKind::Unrecognized
        };
        StopRule {
            kind,
            text: text.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct GuardrailSpec {
    pub stop_conditions: Vec<StopRule>,
    pub uncertainty_default: Level,
    pub uncertainty_tools: BTreeMap<String, Level>,
    pub safety_policies: Vec<String>,
}

impl GuardrailSpec {
    pub fn threshold_for(&self, tool: &str) -> Level {
        self.uncertainty_tools
            .get(tool)
            .copied()
            .unwrap_or(self.uncertainty_default)
    }

    /// Tools with a "low" uncertainty threshold need explicit confirmation.
    pub fn is_destructive(&self, tool: &str) -> bool {
        self.threshold_for(tool) == Level::Low
    }

    pub fn has_rule(&self, kind: StopKind) -> bool {
        self.stop_conditions.iter().any(|r| r.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ScopeBlock {
    pub topic_domain: String,
    pub success_criteria: Vec<String>,
    pub constraints: Vec<String>,
    pub assumptions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Preamble {
    pub name: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AgenticModes {
    pub low_eagerness: String,
    pub high_eagerness: String,
}

impl AgenticModes {
    pub fn text_for(&self, mode: Eagerness) -> &str {
        match mode {
            Eagerness::Low => &self.low_eagerness,
            Eagerness::High => &self.high_eagerness,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Procedure {
    pub id: String,
    pub goal: String,
    pub checks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationPlan {
    pub evidence_fields: Vec<String>,
    pub assumption_fields: Vec<String>,
    pub derivation_fields: Vec<String>,
    pub procedures: Vec<Procedure>,
    /// Plain check list (mini dialect).
    pub checks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AdaptiveRule {
    pub when: String,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ReviewPlan {
    /// Ordered telemetry template, e.g. `response_id -> {{response_id}}`.
    pub metrics: Vec<(String, String)>,
    pub catalog_id: String,
    pub export: bool,
    pub adaptive_actions: Vec<AdaptiveRule>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PhasePlan {
    pub analysis_steps: Vec<String>,
    pub plan_steps: Vec<String>,
    pub execution_rules: Vec<String>,
    pub code_editing_rules: Option<String>,
    pub zero_to_one_booster: Option<String>,
    pub validation: ValidationPlan,
    pub review: ReviewPlan,
    pub handoff_deliverables: Vec<String>,
    pub changelog_format: String,
    pub preambles: Vec<Preamble>,
    pub agentic_modes: AgenticModes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionLogic {
    Direct,
    Inverse,
}

impl FromStr for CriterionLogic {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(CriterionLogic::Direct),
            "inverse" => Ok(CriterionLogic::Inverse),
            other => Err(format!("expected direct|inverse, got \"{other}\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Criterion {
    pub id: String,
    pub logic: CriterionLogic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gate {
    pub id: String,
    pub min_score: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChecklistParams {
    pub min_counterfactuals: usize,
    pub adversarial_probes: usize,
    pub max_uncertainty_items: usize,
}

impl Default for ChecklistParams {
    fn default() -> Self {
        Self {
            min_counterfactuals: 1,
            adversarial_probes: 3,
            max_uncertainty_items: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ScoringSpec {
    pub criteria: Vec<Criterion>,
    pub weights: BTreeMap<String, f64>,
    pub gates: Vec<Gate>,
    pub metrics_fields: Vec<String>,
    pub checklist: ChecklistParams,
}

impl ScoringSpec {
    pub fn criterion(&self, id: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.id == id)
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.values().sum()
    }

    pub fn is_gated(&self, id: &str) -> bool {
        self.gates.iter().any(|g| g.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BudgetSpec {
    pub enabled: bool,
    pub target_latency_ms: f64,
    pub target_cost_usd: f64,
    pub min_quality: f64,
    pub max_tokens_cap: u32,
    pub max_tools_cap: u32,
    pub tokens_up_pct: f64,
    pub tokens_down_pct: f64,
    pub tool_step: u32,
    pub mus_heat: f64,
    pub mus_cool: f64,
    pub guard_soft_pct: f64,
    pub guard_hard_pct: f64,
    pub ema_alpha: f64,
    pub hysteresis_pct: f64,
    pub cooldown_steps: u32,
    pub allow_use_web_drop: bool,
    pub allow_reasoning_downgrade: bool,
    pub cost_budget_tokens: u32,
    pub latency_budget_ms: f64,
    /// USD per token; may be an unresolved slot in the source document.
    pub price_per_token_est: Param,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(into = "String")]
pub enum FallbackAction {
    Summary,
    Rag,
    RagThenSummary,
    Partial,
    Other(String),
}

impl FallbackAction {
    pub fn parse(s: &str) -> FallbackAction {
        match s {
            "summary" => FallbackAction::Summary,
            "rag" => FallbackAction::Rag,
            "rag_then_summary" => FallbackAction::RagThenSummary,
            "partial" => FallbackAction::Partial,
            other => FallbackAction::Other(other.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            FallbackAction::Summary => "summary",
            FallbackAction::Rag => "rag",
            FallbackAction::RagThenSummary => "rag_then_summary",
            FallbackAction::Partial => "partial",
            FallbackAction::Other(s) => s,
        }
    }
}

impl From<FallbackAction> for String {
    fn from(a: FallbackAction) -> String {
        a.as_str().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct FallbackSpec {
    pub enabled: bool,
    pub trigger_economy: bool,
    pub max_context_chars: usize,
    pub min_top1_sim: f64,
    pub min_avg_topk_sim: f64,
    pub topk: usize,
    pub action_order: Vec<FallbackAction>,
    pub summary_target_tokens: usize,
    pub summary_strategy: String,
    pub map_chunk_chars: usize,
    pub reduce_passes: usize,
    pub rag_k: usize,
    pub mmr_lambda: f64,
    pub rag_min_sim: f64,
    pub cache_dir: String,
    pub stop_when_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RuntimePolicies {
    pub max_steps: u32,
    pub retry: u32,
    pub backoff: String,
    pub parallel_branches: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ConnectorSpec {
    pub graph_enabled: bool,
    pub node_fields: Vec<String>,
    pub edge_fields: Vec<String>,
    pub runtime: RuntimePolicies,
    pub hooks: Vec<String>,
    pub crew_enabled: bool,
    pub roles: Vec<BTreeMap<String, String>>,
    pub task_contract: BTreeMap<String, String>,
    pub reviewer_role: String,
    pub escalation_rules: String,
    pub max_rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SwitchBlock {
    pub agentic_mode: Eagerness,
    pub use_web_search: bool,
    pub allow_partial_completion: bool,
    /// e.g. `when_web_used`; booleans are kept as `"true"`/`"false"`.
    pub produce_citations: String,
    pub produce_review_export: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileId {
    Research,
    Coding,
    Education,
}

impl ProfileId {
    pub const ALL: [ProfileId; 3] = [ProfileId::Research, ProfileId::Coding, ProfileId::Education];

    pub fn as_str(self) -> &'static str {
        match self {
            ProfileId::Research => "research",
            ProfileId::Coding => "coding",
            ProfileId::Education => "education",
        }
    }
}

impl FromStr for ProfileId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProfileId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

impl fmt::Display for ProfileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ProfileSpec {
    pub default_mode: String,
    pub use_web: bool,
    pub extra_gates: Vec<Gate>,
    pub criterion_swaps: Vec<(String, String)>,
    pub added_criteria: Vec<(String, f64)>,
    /// Free-text extras attached to the profile inside the validation phase.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ArtifactRef {
    pub name: String,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct InputOutputSpec {
    pub context_input: String,
    pub goal: Option<String>,
    pub artifacts: Vec<ArtifactRef>,
    pub structured_type: String,
    pub schema_hint: Option<String>,
    pub structured_include: Vec<String>,
    pub logging_include: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Preset {
    pub temperature: Option<f64>,
    pub reasoning_effort: Option<Level>,
    pub max_calls: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Snippet {
    /// A literal block of text.
    Text(String),
    /// A `{example: <text>}` mapping.
    Example(String),
    Preset(Preset),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ContractDoc {
    /// Root key of the source document, e.g. `PARCER_v1_4_7`.
    pub root_key: String,
    pub version: String,
    pub rationale: Option<String>,
    pub meta: MetaBlock,
    pub model_profile: ModelProfile,
    pub telemetry_spec: TelemetrySpec,
    pub memory_spec: MemorySpec,
    pub guardrails: GuardrailSpec,
    pub scope: ScopeBlock,
    pub phases: PhasePlan,
    pub scoring: ScoringSpec,
    pub budget: BudgetSpec,
    pub fallback: FallbackSpec,
    pub connectors: ConnectorSpec,
    pub switches: SwitchBlock,
    pub profiles: BTreeMap<ProfileId, ProfileSpec>,
    pub io: InputOutputSpec,
    pub snippets: BTreeMap<String, Snippet>,
    /// Set once a profile has been applied.
    pub resolved_profile: Option<ProfileId>,
}

impl ContractDoc {
    /// Named parameter presets (e.g. the low-latency preset).
    pub fn presets(&self) -> impl Iterator<Item = (&str, &Preset)> {
        self.snippets.iter().filter_map(|(k, s)| match s {
            Snippet::Preset(p) => Some((k.as_str(), p)),
            _ => None,
        })
    }

    /// Effective eagerness: the switch overrides the profile default.
    pub fn eagerness(&self) -> Eagerness {
        self.switches.agentic_mode
    }
}
