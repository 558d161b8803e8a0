//! The review metrics bundle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ChecklistReport, EvidenceItem, GateStatus, NoiseReport, Scorecard, Verdict};
use crate::budget::SpendLedger;
use crate::contract::ScoringSpec;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TelemetryBrief {
    pub tokens: u64,
    pub cost: f64,
    pub latency: f64,
    pub tool_calls: u64,
}

impl From<&SpendLedger> for TelemetryBrief {
    fn from(s: &SpendLedger) -> Self {
        Self {
            tokens: s.tokens_used,
            cost: s.cost_usd,
            latency: s.wall_ms,
            tool_calls: s.tool_calls,
        }
    }
}

/// Field names follow the contract's `metrics_export.fields` list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewMetrics {
    pub scores: BTreeMap<String, f64>,
    pub weighted_score: f64,
    pub gates_status: BTreeMap<String, GateStatus>,
    pub verdict: Verdict,
    pub uncertainty_summary: Vec<String>,
    pub actions_required: Vec<String>,
    pub telemetry_brief: TelemetryBrief,
    pub evidence_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_index: Option<f64>,
}

pub struct ExportInputs<'a> {
    pub card: &'a Scorecard,
    pub spec: &'a ScoringSpec,
    pub gates_status: &'a BTreeMap<String, GateStatus>,
    pub weighted: f64,
    pub verdict: Verdict,
    pub min_quality: f64,
    pub checklist: Option<&'a ChecklistReport>,
    pub docket: &'a [EvidenceItem],
    pub spend: &'a SpendLedger,
    pub noise: Option<&'a NoiseReport>,
}

/// Rework bullets; empty exactly when the verdict is accept.
pub fn actions_required(inp: &ExportInputs<'_>) -> Vec<String> {
    if inp.verdict == Verdict::Accept {
        return Vec::new();
    }
    let mut out = Vec::new();
    for g in &inp.spec.gates {
        if inp.gates_status.get(&g.id) == Some(&GateStatus::Fail) {
            let s = inp.card.scores.get(&g.id).copied().unwrap_or(0.0);
            out.push(format!("{}: score {s} below gate minimum {} (gate failed)", g.id, g.min_score));
        }
    }
    let target = 100.0 * inp.min_quality;
    if inp.weighted < target {
        out.push(format!("weighted_score {:.1} below quality target {target:.1}", inp.weighted));
    }
    if let Some(c) = inp.checklist {
        out.extend(c.failures.iter().map(|f| format!("checklist: {f}")));
    }
    if out.is_empty() {
        out.push("resolve validation findings before delivery".to_string());
    }
    out
}

pub fn export_metrics(inp: &ExportInputs<'_>) -> ReviewMetrics {
    let uncertainty_summary = inp
        .checklist
        .map(|c| {
            c.uncertainties
                .iter()
                .map(|u| {
                    let kind = serde_json::to_value(u.kind).ok();
                    let impact = serde_json::to_value(u.impact).ok();
                    format!(
                        "{} ({}, impact {})",
                        u.item,
                        kind.as_ref().and_then(|v| v.as_str()).unwrap_or(""),
                        impact.as_ref().and_then(|v| v.as_str()).unwrap_or("")
                    )
                })
                .collect()
        })
        .unwrap_or_default();
    ReviewMetrics {
        scores: inp.card.scores.clone(),
        weighted_score: inp.weighted,
        gates_status: inp.gates_status.clone(),
        verdict: inp.verdict,
        uncertainty_summary,
        actions_required: actions_required(inp),
        telemetry_brief: inp.spend.into(),
        evidence_refs: inp.docket.iter().map(|e| e.evidence_id.clone()).collect(),
        noise_index: inp.noise.map(|n| n.noise_index),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::baseline;
    use crate::hygiene::{apply_gates, decide_verdict, weighted_score};

    fn card(faith: f64) -> Scorecard {
        let mut c = Scorecard::default();
        for cr in &baseline().scoring.criteria {
            c.scores.insert(cr.id.clone(), 5.0);
        }
        c.scores.insert("faithfulness".into(), faith);
        c
    }

    fn export(faith: f64) -> ReviewMetrics {
        let spec = &baseline().scoring;
        let c = card(faith);
        let gates = apply_gates(&c, &spec.gates).unwrap();
        let w = weighted_score(&c, spec).unwrap();
        let verdict = decide_verdict(&gates, w, 0, 3, 0.75);
        export_metrics(&ExportInputs {
            card: &c,
            spec,
            gates_status: &gates,
            weighted: w,
            verdict,
            min_quality: 0.75,
            checklist: None,
            docket: &[],
            spend: &SpendLedger::default(),
            noise: None,
        })
    }

    #[test]
    fn accept_has_no_actions() {
        let m = export(5.0);
        assert_eq!(m.verdict, Verdict::Accept);
        assert!(m.actions_required.is_empty());
    }

    #[test]
    fn revise_names_the_gate() {
        let m = export(2.0);
        assert_eq!(m.verdict, Verdict::Revise);
        assert!(m.actions_required.iter().any(|a| a.starts_with("faithfulness") && a.contains("gate")));
    }

    #[test]
    fn field_names() {
        let v = serde_json::to_value(export(5.0)).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(
            keys,
            ["actions_required", "evidence_refs", "gates_status", "scores", "telemetry_brief", "uncertainty_summary", "verdict", "weighted_score"]
        );
        let brief: Vec<&String> = v["telemetry_brief"].as_object().unwrap().keys().collect();
        assert_eq!(brief, ["cost", "latency", "tokens", "tool_calls"]);
    }
}
