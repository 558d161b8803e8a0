//! Context defense: trigger detection, map-reduce summaries, MMR retrieval
//! and partial completion, run as a cascade in contract order.

mod embed;
mod mmr;

use serde::{Deserialize, Serialize};

use crate::backend::{estimate_tokens, Backend, BackendError, ModelRequest, ModelResponse};
use crate::contract::{FallbackAction, FallbackSpec};
use crate::exec::{self, ExecMode};

pub use embed::{embed_chunks, CacheMeta, Embedder, EmbeddingCache, HashEmbedder};
pub use mmr::{cosine_sim, mmr_select, mmr_select_matrix};

pub const LIMITATIONS_NOTE: &str = "Partial completion: methodological limitations apply. \
The available context could not be reduced with sufficient confidence, so the result covers only part of the input.";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FallbackError {
    #[error("zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no chunks to summarize")]
    NoChunks,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("cache i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for FallbackError {
    fn from(e: std::io::Error) -> Self {
        FallbackError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalStats {
    pub top1_sim: f64,
    pub avg_topk_sim: f64,
    pub k_used: usize,
}

impl RetrievalStats {
    /// Stats over the `k` best similarities.
    pub fn from_sims(sims: &[f64], k: usize) -> Option<RetrievalStats> {
        let mut s: Vec<f64> = sims.to_vec();
        s.sort_by(|a, b| b.total_cmp(a));
        s.truncate(k);
        let top1 = *s.first()?;
        Some(RetrievalStats {
            top1_sim: top1,
            avg_topk_sim: s.iter().sum::<f64>() / s.len() as f64,
            k_used: s.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    pub text: String,
    /// Character offsets `[start, end)` into the source text.
    pub char_span: (usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextBundle {
    pub raw_text: String,
    pub char_count: usize,
    pub chunks: Option<Vec<Chunk>>,
    pub retrieval_stats: Option<RetrievalStats>,
}

impl ContextBundle {
    pub fn new(raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        Self {
            char_count: raw_text.chars().count(),
            raw_text,
            chunks: None,
            retrieval_stats: None,
        }
    }

    pub fn with_stats(mut self, stats: RetrievalStats) -> Self {
        self.retrieval_stats = Some(stats);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerReason {
    Economy,
    ContextSize,
    RetrievalDegraded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerDecision {
    pub fire: bool,
    pub reasons: Vec<TriggerReason>,
}

pub fn should_trigger(bundle: &ContextBundle, economy: bool, spec: &FallbackSpec) -> TriggerDecision {
    let mut reasons = Vec::new();
    if spec.enabled {
        if economy && spec.trigger_economy {
            reasons.push(TriggerReason::Economy);
        }
        if bundle.char_count > spec.max_context_chars {
            reasons.push(TriggerReason::ContextSize);
        }
        if let Some(s) = bundle.retrieval_stats {
            if s.top1_sim < spec.min_top1_sim || s.avg_topk_sim < spec.min_avg_topk_sim {
                reasons.push(TriggerReason::RetrievalDegraded);
            }
        }
    }
    TriggerDecision {
        fire: !reasons.is_empty(),
        reasons,
    }
}

/// Sequential character tiling; the last chunk may be shorter.
pub fn chunk_context(text: &str, map_chunk_chars: usize) -> Vec<Chunk> {
    let size = map_chunk_chars.max(1);
    let mut bounds: Vec<usize> = text.char_indices().map(|(b, _)| b).step_by(size).collect();
    bounds.push(text.len());
    let total_chars = text.chars().count();
    bounds
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] < w[1])
        .map(|(i, w)| Chunk {
            index: i,
            text: text[w[0]..w[1]].to_string(),
            char_span: (i * size, ((i + 1) * size).min(total_chars)),
            embedding: None,
        })
        .collect()
}

/// Result of a map-reduce pass, with every backend reply for accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub text: String,
    pub confidence: Option<f64>,
    pub responses: Vec<ModelResponse>,
}

/// Execution knobs shared by the summary and cascade stages.
#[derive(Debug, Clone, Copy)]
pub struct StageOptions {
    pub mode: ExecMode,
    /// Maximum concurrent map calls.
    pub map_width: usize,
}

impl Default for StageOptions {
    fn default() -> Self {
        Self {
            mode: ExecMode::Sequential,
            map_width: 1,
        }
    }
}

fn map_instructions(i: usize, n: usize) -> String {
    format!("Summarize excerpt {}/{} faithfully. Keep facts, figures, names and dates.", i + 1, n)
}

fn reduce_instructions(target_tokens: usize, pass: &str) -> String {
    format!("Merge the excerpt summaries below into one summary of at most {target_tokens} tokens (reduce pass {pass}).")
}

/// Map: one call per chunk. Reduce: the chunk-ordered concatenation of the
/// map outputs is summarized once per pass, and once more if the result
/// exceeds 1.2 × `target_tokens`.
pub fn map_reduce_summary(
    chunks: &[Chunk],
    backend: &dyn Backend,
    template: &ModelRequest,
    target_tokens: usize,
    reduce_passes: usize,
    opts: StageOptions,
) -> Result<Summary, FallbackError> {
    if chunks.is_empty() {
        return Err(FallbackError::NoChunks);
    }
    let n = chunks.len();
    let mapped = exec::map_batched(opts.mode, opts.map_width, chunks, |c| {
        let mut req = template.clone();
        req.instructions = map_instructions(c.index, n);
        req.context = c.text.clone();
        backend.invoke(&req)
    });
    let mut responses = Vec::with_capacity(n + reduce_passes + 1);
    for r in mapped {
        responses.push(r?);
    }
    let mut text = responses.iter().map(|r| r.text.as_str()).collect::<Vec<_>>().join("\n");
    let mut confidence = None;
    let mut reduce = |text: &str, pass: String, responses: &mut Vec<ModelResponse>| -> Result<String, FallbackError> {
        let mut req = template.clone();
        req.instructions = reduce_instructions(target_tokens, &pass);
        req.context = text.to_string();
        let resp = backend.invoke(&req)?;
        confidence = resp.confidence();
        let out = resp.text.clone();
        responses.push(resp);
        Ok(out)
    };
    for p in 0..reduce_passes.max(1) {
        text = reduce(&text, (p + 1).to_string(), &mut responses)?;
    }
    if estimate_tokens(&text) as f64 > 1.2 * target_tokens as f64 {
        text = reduce(&text, "final".into(), &mut responses)?;
    }
    Ok(Summary {
        text,
        confidence,
        responses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionTaken {
    None,
    Summary,
    Rag,
    RagThenSummary,
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Accepted,
    BelowThreshold,
    Failed,
    Impossible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub action: String,
    pub status: StageStatus,
    pub confidence: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackOutcome {
    pub action_taken: ActionTaken,
    pub resulting_context: String,
    pub confidence: f64,
    pub notes: String,
    /// Stages attempted, always a prefix of the configured order.
    pub stages: Vec<StageRecord>,
    #[serde(skip)]
    pub responses: Vec<ModelResponse>,
}

/// Confidence override for a finished stage, given the action and its text.
pub type StatsProbe<'a> = &'a dyn Fn(&FallbackAction, &str) -> Option<f64>;

pub struct CascadeEnv<'a> {
    pub backend: &'a dyn Backend,
    /// Base request for summary calls; instructions and context are replaced.
    pub template: ModelRequest,
    pub embedder: Option<&'a dyn Embedder>,
    pub cache: Option<&'a EmbeddingCache>,
    /// Retrieval query, typically the task goal.
    pub query: &'a str,
    pub stats_probe: Option<StatsProbe<'a>>,
    pub opts: StageOptions,
}

struct StageResult {
    text: String,
    confidence: Option<f64>,
    degraded: bool,
    detail: String,
}

enum StageError {
    Failed(String),
    Impossible(String),
}

fn rag_stage(text: &str, spec: &FallbackSpec, env: &CascadeEnv<'_>) -> Result<StageResult, StageError> {
    let embedder = env.embedder.ok_or_else(|| StageError::Impossible("no embedder configured".into()))?;
    let to64 = |v: &[f32]| v.iter().map(|x| f64::from(*x)).collect::<Vec<f64>>();
    let query = to64(&embedder.embed(env.query));
    if query.iter().all(|x| *x == 0.0) {
        return Err(StageError::Impossible("query has no embeddable content".into()));
    }
    let chunks = chunk_context(text, spec.map_chunk_chars);
    let matrix = embed_chunks(env.opts.mode, embedder, &chunks, env.cache).map_err(|e| StageError::Failed(e.to_string()))?;
    let candidates: Vec<(String, Vec<f64>)> = chunks
        .iter()
        .zip(&matrix)
        .map(|(c, v)| (format!("c{:06}", c.index), to64(v)))
        .filter(|(_, v)| v.iter().any(|x| *x != 0.0))
        .collect();
    if candidates.is_empty() {
        return Err(StageError::Impossible("no embeddable chunks".into()));
    }
    let picked = mmr_select(&query, &candidates, spec.rag_k, spec.mmr_lambda, spec.rag_min_sim)
        .map_err(|e| StageError::Failed(e.to_string()))?;
    if picked.is_empty() {
        return Err(StageError::Impossible(format!("no chunk reaches min_sim {}", spec.rag_min_sim)));
    }
    let by_id = |id: &str| candidates.iter().position(|(cid, _)| cid == id).expect("picked id exists");
    let sims: Vec<f64> = picked
        .iter()
        .map(|id| cosine_sim(&query, &candidates[by_id(id)].1).unwrap_or(0.0))
        .collect();
    let stats = RetrievalStats::from_sims(&sims, sims.len()).expect("non-empty selection");
    let degraded = stats.top1_sim < spec.min_top1_sim || stats.avg_topk_sim < spec.min_avg_topk_sim;
    let text = picked
        .iter()
        .map(|id| chunks[by_id(id)].text.as_str())
        .collect::<Vec<_>>()
        .join("\n\n");
    Ok(StageResult {
        text,
        confidence: Some(stats.top1_sim),
        degraded,
        detail: format!(
            "selected {} chunks, top1 {:.3}, avg {:.3}",
            picked.len(),
            stats.top1_sim,
            stats.avg_topk_sim
        ),
    })
}

fn summary_stage(
    text: &str,
    spec: &FallbackSpec,
    env: &CascadeEnv<'_>,
    responses: &mut Vec<ModelResponse>,
) -> Result<StageResult, StageError> {
    let chunks = chunk_context(text, spec.map_chunk_chars);
    let s = map_reduce_summary(&chunks, env.backend, &env.template, spec.summary_target_tokens, spec.reduce_passes, env.opts)
        .map_err(|e| StageError::Failed(e.to_string()))?;
    let detail = format!("{} chunks, {} backend calls", chunks.len(), s.responses.len());
    responses.extend(s.responses);
    Ok(StageResult {
        text: s.text,
        confidence: s.confidence,
        degraded: false,
        detail,
    })
}

/// Runs `action_order` left to right until a stage reaches
/// `stop_when_confidence`. `partial` ends the cascade; if the order has no
/// `partial` and every stage falls short, a partial outcome is returned
/// anyway.
pub fn run_cascade(bundle: &ContextBundle, spec: &FallbackSpec, env: &CascadeEnv<'_>) -> FallbackOutcome {
    let mut stages = Vec::new();
    let mut responses = Vec::new();
    let mut best = 0.0f64;
    for action in &spec.action_order {
        let result = match action {
            FallbackAction::Partial => break,
            FallbackAction::Summary => summary_stage(&bundle.raw_text, spec, env, &mut responses),
            FallbackAction::Rag => rag_stage(&bundle.raw_text, spec, env),
            FallbackAction::RagThenSummary => rag_stage(&bundle.raw_text, spec, env)
                .and_then(|r| summary_stage(&r.text, spec, env, &mut responses)),
            FallbackAction::Other(name) => Err(StageError::Impossible(format!("unknown action \"{name}\""))),
        };
        let record = |status, confidence, detail| StageRecord {
            action: action.as_str().to_string(),
            status,
            confidence,
            detail,
        };
        match result {
            Err(StageError::Failed(d)) => stages.push(record(StageStatus::Failed, None, d)),
            Err(StageError::Impossible(d)) => stages.push(record(StageStatus::Impossible, None, d)),
            Ok(r) => {
                let confidence = r
                    .confidence
                    .filter(|_| !matches!(action, FallbackAction::Rag))
                    .or_else(|| env.stats_probe.and_then(|p| p(action, &r.text)))
                    .or(r.confidence);
                let c = confidence.unwrap_or(0.0);
                best = best.max(c);
                if !r.degraded && c >= spec.stop_when_confidence {
                    stages.push(record(StageStatus::Accepted, confidence, r.detail));
                    let action_taken = match action {
                        FallbackAction::Summary => ActionTaken::Summary,
                        FallbackAction::Rag => ActionTaken::Rag,
                        _ => ActionTaken::RagThenSummary,
                    };
                    return FallbackOutcome {
                        action_taken,
                        resulting_context: r.text,
                        confidence: c,
                        notes: format!("{} accepted at confidence {c:.3}", action.as_str()),
                        stages,
                        responses,
                    };
                }
                stages.push(record(StageStatus::BelowThreshold, confidence, r.detail));
            }
        }
    }
    if spec.action_order.contains(&FallbackAction::Partial) {
        stages.push(StageRecord {
            action: "partial".into(),
            status: StageStatus::Accepted,
            confidence: None,
            detail: String::new(),
        });
    }
    FallbackOutcome {
        action_taken: ActionTaken::Partial,
        resulting_context: bundle.raw_text.chars().take(spec.max_context_chars).collect(),
        confidence: best,
        notes: LIMITATIONS_NOTE.to_string(),
        stages,
        responses,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Transcript, TranscriptBackend};
    use crate::contract::{baseline, Level};
    use crate::phase::Phase;
    use serde_json::json;

    fn spec() -> FallbackSpec {
        baseline().fallback.clone()
    }

    #[test]
    fn triggers() {
        let s = spec();
        let d = should_trigger(&ContextBundle::new("x".repeat(130_000)), false, &s);
        assert_eq!(d.reasons, [TriggerReason::ContextSize]);
        let stats = RetrievalStats { top1_sim: 0.30, avg_topk_sim: 0.30, k_used: 5 };
        let d = should_trigger(&ContextBundle::new("x").with_stats(stats), false, &s);
        assert_eq!(d.reasons, [TriggerReason::RetrievalDegraded]);
        let ok = RetrievalStats { top1_sim: 0.9, avg_topk_sim: 0.8, k_used: 5 };
        assert!(!should_trigger(&ContextBundle::new("x".repeat(100_000)).with_stats(ok), false, &s).fire);
        assert_eq!(should_trigger(&ContextBundle::new(""), true, &s).reasons, [TriggerReason::Economy]);
    }

    #[test]
    fn chunking() {
        let sizes = |n: usize, k: usize| chunk_context(&"a".repeat(n), k).iter().map(|c| c.text.len()).collect::<Vec<_>>();
        assert_eq!(sizes(20_000, 8_000), [8000, 8000, 4000]);
        assert!(chunk_context("", 8000).is_empty());
        assert_eq!(sizes(8000, 8000), [8000]);
        let text = "héllo wörld ✓ abc";
        let chunks = chunk_context(text, 4);
        assert_eq!(chunks.iter().map(|c| c.text.as_str()).collect::<String>(), text);
        assert_eq!(chunks.last().unwrap().char_span.1, text.chars().count());
    }

    pub(crate) fn template() -> ModelRequest {
        ModelRequest {
            phase: Phase::Execution,
            instructions: String::new(),
            context: String::new(),
            previous_response_id: None,
            reasoning_effort: Level::Medium,
            verbosity: Level::Low,
            temperature: 0.0,
            seed: None,
            tool_allowance: 0,
            max_output_tokens: None,
            use_web: false,
        }
    }

    fn entry(text: &str, confidence: Option<f64>) -> String {
        let mut resp = json!({"response_id": text, "text": text, "response_tokens": 10, "response_cost": 0.0, "response_time_ms": 1});
        if let Some(c) = confidence {
            resp["structured"] = json!({"confidence": c});
        }
        json!({"match": {"phase": "3_execution"}, "response": resp}).to_string()
    }

    fn backend(lines: &[String]) -> TranscriptBackend {
        TranscriptBackend::new(Transcript::parse(&lines.join("\n")).unwrap())
    }

    #[test]
    fn map_reduce_orders_by_chunk() {
        let b = backend(&[entry("S1", None), entry("S2", None), entry("S3", None), entry("R", None)]);
        let chunks = chunk_context(&"x".repeat(20), 8);
        let s = map_reduce_summary(&chunks, &b, &template(), 800, 1, StageOptions::default()).unwrap();
        assert_eq!(s.text, "R");
        assert_eq!(b.requests()[3].context, "S1\nS2\nS3");
        assert_eq!(b.remaining(), 0);
    }

    #[test]
    fn single_chunk_still_reduces() {
        let b = backend(&[entry("S1", None), entry("R", None)]);
        let s = map_reduce_summary(&chunk_context("abc", 8), &b, &template(), 800, 1, StageOptions::default()).unwrap();
        assert_eq!(s.responses.len(), 2);
        assert_eq!(b.requests()[1].context, "S1");
    }

    fn env<'a>(b: &'a TranscriptBackend, e: &'a HashEmbedder, probe: Option<StatsProbe<'a>>) -> CascadeEnv<'a> {
        CascadeEnv {
            backend: b,
            template: template(),
            embedder: Some(e),
            cache: None,
            query: "alpha",
            stats_probe: probe,
            opts: StageOptions::default(),
        }
    }

    #[test]
    fn cascade_stops_at_confident_summary() {
        let b = backend(&[entry("S", None), entry("R", Some(0.9))]);
        let e = HashEmbedder::new(0);
        let out = run_cascade(&ContextBundle::new("alpha beta"), &spec(), &env(&b, &e, None));
        assert_eq!(out.action_taken, ActionTaken::Summary);
        assert_eq!(out.stages.len(), 1);
        assert_eq!(out.resulting_context, "R");
    }

    #[test]
    fn cascade_falls_through_to_rag() {
        let b = backend(&[entry("S", None), entry("R", Some(0.6))]);
        let e = HashEmbedder::new(0);
        let probe = |a: &FallbackAction, _: &str| (*a == FallbackAction::Rag).then_some(0.9);
        let out = run_cascade(&ContextBundle::new("alpha alpha alpha"), &spec(), &env(&b, &e, Some(&probe)));
        assert_eq!(out.action_taken, ActionTaken::Rag);
        assert_eq!(out.stages.iter().map(|s| s.action.as_str()).collect::<Vec<_>>(), ["summary", "rag"]);
    }

    #[test]
    fn cascade_ends_partial() {
        let lines: Vec<String> = (0..8).map(|i| entry(&format!("s{i}"), Some(0.5))).collect();
        let b = backend(&lines);
        let e = HashEmbedder::new(0);
        let probe = |_: &FallbackAction, _: &str| Some(0.5);
        let out = run_cascade(&ContextBundle::new("alpha beta"), &spec(), &env(&b, &e, Some(&probe)));
        assert_eq!(out.action_taken, ActionTaken::Partial);
        assert!(out.notes.contains("methodological limitations"));
        let names: Vec<&str> = out.stages.iter().map(|s| s.action.as_str()).collect();
        assert_eq!(names, ["summary", "rag", "rag_then_summary", "partial"]);
    }
}
