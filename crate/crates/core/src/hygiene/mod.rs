//! Phase-4 decision hygiene: scoring, hard gates, verdicts, double
//! evaluation noise, checklists and the metrics bundle.
//!
//! Direct criterion scores come from the model's evaluation; only inverse
//! scoring, aggregation and gating are computed here.

mod checklist;
mod docket;
mod export;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::budget::SpendLedger;
use crate::contract::{BudgetSpec, CriterionLogic, Gate, ScoringSpec};
use crate::exec::{self, ExecMode};

pub use checklist::{
    evaluate_checklist, run_counterfactuals_and_probes, ChecklistPayload, ChecklistReport, Counterfactual, Probe,
    UncertaintyItem, UncertaintyKind,
};
pub use docket::{
    check_docket, check_evidence_alignment, check_register, AlignmentReport, Assumption, AssertionMapping,
    DerivationLink, EvidenceItem, Impact, MISSING,
};
pub use export::{actions_required, export_metrics, ExportInputs, ReviewMetrics, TelemetryBrief};

/// Criterion whose gate failure always rejects.
pub const SAFETY_CRITERION: &str = "safety";
/// Default threshold above which a double evaluation is flagged noisy.
pub const NOISE_THRESHOLD: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HygieneError {
    #[error("dangling evidence id \"{0}\"")]
    DanglingEvidence(String),
    #[error("duplicate id \"{0}\"")]
    DuplicateId(String),
    #[error("evidence \"{0}\" has an empty excerpt")]
    EmptyExcerpt(String),
    #[error("negative utilization {0}")]
    NegativeUtilization(f64),
    #[error("score for {id} is {score}, outside [0, 5]")]
    ScoreOutOfRange { id: String, score: f64 },
    #[error("scorecard keys differ from criteria (missing: {missing:?}, extra: {extra:?})")]
    KeyMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("gate on unscored criterion \"{0}\"")]
    UnscoredGate(String),
    #[error("no score supplied for criterion \"{0}\"")]
    MissingScore(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scorecard {
    pub scores: BTreeMap<String, f64>,
    /// Inverse criteria carry their utilization ratio here.
    #[serde(default)]
    pub raw_inputs: BTreeMap<String, f64>,
    #[serde(default)]
    pub evaluator_tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateStatus {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Revise,
    Reject,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Accept => "accept",
            Verdict::Revise => "revise",
            Verdict::Reject => "reject",
        }
    }
}

/// `5·(1 − clamp(u, 0, 1))`.
pub fn score_inverse(utilization: f64) -> Result<f64, HygieneError> {
    if utilization < 0.0 || utilization.is_nan() {
        return Err(HygieneError::NegativeUtilization(utilization));
    }
    Ok(5.0 * (1.0 - utilization.min(1.0)))
}

/// Worst of the token, latency and cost ratios.
pub fn efficiency_utilization(spend: &SpendLedger, budget: &BudgetSpec) -> f64 {
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    ratio(spend.tokens_used as f64, budget.cost_budget_tokens as f64)
        .max(ratio(spend.wall_ms, budget.latency_budget_ms))
        .max(ratio(spend.cost_usd, budget.target_cost_usd))
}

/// Builds a scorecard from the model's direct scores plus locally computed
/// inverse scores. Scores the model sent for inverse criteria are ignored.
pub fn build_scorecard(
    spec: &ScoringSpec,
    direct: &BTreeMap<String, f64>,
    utilization: f64,
    evaluator_tag: &str,
) -> Result<Scorecard, HygieneError> {
    let mut card = Scorecard {
        evaluator_tag: evaluator_tag.to_string(),
        ..Default::default()
    };
    for c in &spec.criteria {
        let score = match c.logic {
            CriterionLogic::Inverse => {
                card.raw_inputs.insert(c.id.clone(), utilization);
                score_inverse(utilization)?
            }
            CriterionLogic::Direct => *direct.get(&c.id).ok_or_else(|| HygieneError::MissingScore(c.id.clone()))?,
        };
        card.scores.insert(c.id.clone(), score);
    }
    Ok(card)
}

fn check_keys(card: &Scorecard, spec: &ScoringSpec) -> Result<(), HygieneError> {
    let want: BTreeSet<&str> = spec.criteria.iter().map(|c| c.id.as_str()).collect();
    let have: BTreeSet<&str> = card.scores.keys().map(String::as_str).collect();
    if want != have {
        return Err(HygieneError::KeyMismatch {
            missing: want.difference(&have).map(|s| s.to_string()).collect(),
            extra: have.difference(&want).map(|s| s.to_string()).collect(),
        });
    }
    for (id, &s) in &card.scores {
        if !(0.0..=5.0).contains(&s) {
            return Err(HygieneError::ScoreOutOfRange { id: id.clone(), score: s });
        }
    }
    Ok(())
}

/// Rounds onto a 1e-9 grid so that exact decimal inputs give exact results.
fn snap(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// `100 · Σ wᵢ·(sᵢ/5)`, in [0, 100].
pub fn weighted_score(card: &Scorecard, spec: &ScoringSpec) -> Result<f64, HygieneError> {
    check_keys(card, spec)?;
    let sum: f64 = spec
        .criteria
        .iter()
        .map(|c| spec.weights.get(&c.id).copied().unwrap_or(0.0) * card.scores[&c.id])
        .sum();
    Ok(snap(sum * 20.0).clamp(0.0, 100.0))
}

/// Scores many scorecards against one spec.
pub fn weighted_scores(mode: ExecMode, cards: &[Scorecard], spec: &ScoringSpec) -> Vec<Result<f64, HygieneError>> {
    exec::map(mode, cards, |c| weighted_score(c, spec))
}

/// Evaluates every gate; inclusive thresholds.
pub fn apply_gates(card: &Scorecard, gates: &[Gate]) -> Result<BTreeMap<String, GateStatus>, HygieneError> {
    let mut out = BTreeMap::new();
    for g in gates {
        let s = *card
            .scores
            .get(&g.id)
            .ok_or_else(|| HygieneError::UnscoredGate(g.id.clone()))?;
        let status = if s >= f64::from(g.min_score) {
            GateStatus::Pass
        } else {
            GateStatus::Fail
        };
        out.insert(g.id.clone(), status);
    }
    Ok(out)
}

/// Safety failure rejects outright. Other gate failures revise while rounds
/// remain and reject after. A score below `100·min_quality` with all gates
/// passing revises; it never rejects by itself.
pub fn decide_verdict(
    gates_status: &BTreeMap<String, GateStatus>,
    weighted: f64,
    rounds_used: u32,
    max_rounds: u32,
    min_quality: f64,
) -> Verdict {
    if gates_status.get(SAFETY_CRITERION) == Some(&GateStatus::Fail) {
        return Verdict::Reject;
    }
    if gates_status.values().any(|s| *s == GateStatus::Fail) {
        return if rounds_used >= max_rounds {
            Verdict::Reject
        } else {
            Verdict::Revise
        };
    }
    if weighted < 100.0 * min_quality {
        return Verdict::Revise;
    }
    Verdict::Accept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub card: Scorecard,
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub noise_index: f64,
    pub per_criterion: BTreeMap<String, f64>,
    pub max_criterion_delta: f64,
    pub noisy: bool,
}

pub fn noise_index(a: &Evaluation, b: &Evaluation) -> Result<NoiseReport, HygieneError> {
    noise_index_with_threshold(a, b, NOISE_THRESHOLD)
}

pub fn noise_index_with_threshold(a: &Evaluation, b: &Evaluation, threshold: f64) -> Result<NoiseReport, HygieneError> {
    let ka: BTreeSet<&String> = a.card.scores.keys().collect();
    let kb: BTreeSet<&String> = b.card.scores.keys().collect();
    if ka != kb {
        return Err(HygieneError::KeyMismatch {
            missing: ka.difference(&kb).map(|s| s.to_string()).collect(),
            extra: kb.difference(&ka).map(|s| s.to_string()).collect(),
        });
    }
    let per_criterion: BTreeMap<String, f64> = a
        .card
        .scores
        .iter()
        .map(|(k, sa)| (k.clone(), (sa - b.card.scores[k]).abs()))
        .collect();
    let max_criterion_delta = per_criterion.values().copied().fold(0.0, f64::max);
    let noise_index = (a.weighted - b.weighted).abs() / 100.0;
    Ok(NoiseReport {
        noise_index,
        per_criterion,
        max_criterion_delta,
        noisy: noise_index > threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::baseline;

    fn card(pairs: &[(&str, f64)]) -> Scorecard {
        Scorecard {
            scores: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            ..Default::default()
        }
    }

    fn worked() -> Scorecard {
        card(&[
            ("fitness", 4.0),
            ("faithfulness", 3.0),
            ("completeness", 5.0),
            ("clarity", 5.0),
            ("efficiency", 2.0),
            ("safety", 4.0),
            ("traceability", 3.0),
        ])
    }

    fn uniform(s: f64) -> Scorecard {
        let ids: Vec<String> = baseline().scoring.criteria.iter().map(|c| c.id.clone()).collect();
        Scorecard {
            scores: ids.into_iter().map(|k| (k, s)).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn inverse_scores() {
        assert_eq!(score_inverse(0.0), Ok(5.0));
        assert_eq!(score_inverse(1.0), Ok(0.0));
        assert_eq!(score_inverse(0.5), Ok(2.5));
        assert_eq!(score_inverse(3.0), Ok(0.0));
        assert!(score_inverse(-0.1).is_err());
    }

    #[test]
    fn weighted() {
        let spec = &baseline().scoring;
        assert_eq!(weighted_score(&worked(), spec), Ok(75.0));
        assert_eq!(weighted_score(&uniform(5.0), spec), Ok(100.0));
        assert_eq!(weighted_score(&uniform(0.0), spec), Ok(0.0));
        let mut c = worked();
        c.scores.remove("clarity");
        assert!(matches!(weighted_score(&c, spec), Err(HygieneError::KeyMismatch { .. })));
        c.scores.insert("clarity".into(), 6.0);
        assert!(matches!(weighted_score(&c, spec), Err(HygieneError::ScoreOutOfRange { .. })));
    }

    #[test]
    fn gates_inclusive() {
        let g = [Gate { id: "faithfulness".into(), min_score: 3 }];
        assert_eq!(apply_gates(&card(&[("faithfulness", 3.0)]), &g).unwrap()["faithfulness"], GateStatus::Pass);
        assert_eq!(apply_gates(&card(&[("faithfulness", 2.9)]), &g).unwrap()["faithfulness"], GateStatus::Fail);
        let all = apply_gates(&uniform(5.0), &baseline().scoring.gates).unwrap();
        assert!(all.values().all(|s| *s == GateStatus::Pass));
        assert_eq!(all.len(), 3);
        assert_eq!(apply_gates(&card(&[]), &g), Err(HygieneError::UnscoredGate("faithfulness".into())));
    }

    #[test]
    fn verdicts() {
        let pass: BTreeMap<String, GateStatus> =
            ["faithfulness", "safety", "fitness"].iter().map(|k| (k.to_string(), GateStatus::Pass)).collect();
        assert_eq!(decide_verdict(&pass, 75.0, 0, 3, 0.75), Verdict::Accept);
        let mut safety = pass.clone();
        safety.insert("safety".into(), GateStatus::Fail);
        assert_eq!(decide_verdict(&safety, 100.0, 0, 3, 0.75), Verdict::Reject);
        let mut faith = pass.clone();
        faith.insert("faithfulness".into(), GateStatus::Fail);
        assert_eq!(decide_verdict(&faith, 90.0, 1, 3, 0.75), Verdict::Revise);
        assert_eq!(decide_verdict(&faith, 90.0, 3, 3, 0.75), Verdict::Reject);
        assert_eq!(decide_verdict(&pass, 74.9, 3, 3, 0.75), Verdict::Revise);
    }

    #[test]
    fn noise() {
        let e = |w: f64| Evaluation { card: worked(), weighted: w };
        let r = noise_index(&e(80.0), &e(70.0)).unwrap();
        assert!((r.noise_index - 0.10).abs() < 1e-12);
        assert!(!r.noisy);
        assert_eq!(noise_index(&e(75.0), &e(75.0)).unwrap().noise_index, 0.0);
        let r = noise_index(&e(90.0), &e(60.0)).unwrap();
        assert!((r.noise_index - 0.30).abs() < 1e-12);
        assert!(r.noisy);
        let other = Evaluation { card: card(&[("x", 1.0)]), weighted: 1.0 };
        assert!(noise_index(&e(1.0), &other).is_err());
    }

    #[test]
    fn scorecard_from_direct_scores() {
        let spec = &baseline().scoring;
        let mut direct: BTreeMap<String, f64> = worked().scores;
        direct.remove("efficiency");
        let c = build_scorecard(spec, &direct, 0.6, "a").unwrap();
        assert_eq!(c.scores["efficiency"], 2.0);
        assert_eq!(c.raw_inputs["efficiency"], 0.6);
        direct.remove("fitness");
        assert_eq!(build_scorecard(spec, &direct, 0.6, "a"), Err(HygieneError::MissingScore("fitness".into())));
    }

    #[test]
    fn utilization_takes_the_worst_ratio() {
        let b = &baseline().budget;
        let s = SpendLedger { tokens_used: 1000, wall_ms: 45000.0, cost_usd: 0.1, tool_calls: 0 };
        assert!((efficiency_utilization(&s, b) - 0.75).abs() < 1e-12);
    }
}
