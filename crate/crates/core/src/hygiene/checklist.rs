//! Counterfactuals, adversarial probes and the uncertainty register.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::Impact;
use crate::backend::{Backend, ModelRequest, ModelResponse};
use crate::contract::ChecklistParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub scenario: String,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyKind {
    Epistemic,
    Aleatoric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyItem {
    pub item: String,
    pub kind: UncertaintyKind,
    pub impact: Impact,
}

/// Checklist fields as they appear in a structured model payload.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChecklistPayload {
    #[serde(default)]
    pub counterfactuals: Option<Vec<Counterfactual>>,
    #[serde(default)]
    pub probes: Option<Vec<Probe>>,
    #[serde(default)]
    pub uncertainties: Option<Vec<UncertaintyItem>>,
}

impl ChecklistPayload {
    pub fn from_structured(v: Option<&Value>) -> Result<ChecklistPayload, String> {
        match v {
            None => Ok(ChecklistPayload::default()),
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| e.to_string()),
        }
    }

    pub fn is_present(&self) -> bool {
        self.counterfactuals.is_some() || self.probes.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChecklistReport {
    pub counterfactuals: Vec<Counterfactual>,
    pub probes: Vec<Probe>,
    /// At most `max_uncertainty_items` entries.
    pub uncertainties: Vec<UncertaintyItem>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_note: Option<String>,
    pub failures: Vec<String>,
    /// False when the backend could not supply the checklist at all.
    pub complete: bool,
}

impl ChecklistReport {
    pub fn passed(&self) -> bool {
        self.complete && self.failures.is_empty()
    }

    fn incomplete(reason: String) -> Self {
        Self {
            failures: vec![reason],
            complete: false,
            ..Default::default()
        }
    }
}

/// Checks counts against the contract's checklist parameters.
pub fn evaluate_checklist(payload: &ChecklistPayload, params: &ChecklistParams) -> ChecklistReport {
    let counterfactuals = payload.counterfactuals.clone().unwrap_or_default();
    let mut probes = payload.probes.clone().unwrap_or_default();
    let mut uncertainties = payload.uncertainties.clone().unwrap_or_default();
    let mut failures = Vec::new();
    if counterfactuals.len() < params.min_counterfactuals {
        failures.push(format!(
            "counterfactuals: {} < {}",
            counterfactuals.len(),
            params.min_counterfactuals
        ));
    }
    if probes.len() < params.adversarial_probes {
        failures.push(format!("adversarial probes: {} < {}", probes.len(), params.adversarial_probes));
    }
    probes.truncate(params.adversarial_probes);
    let truncation_note = (uncertainties.len() > params.max_uncertainty_items).then(|| {
        let note = format!(
            "uncertainty register truncated from {} to {} items",
            uncertainties.len(),
            params.max_uncertainty_items
        );
        uncertainties.truncate(params.max_uncertainty_items);
        note
    });
    ChecklistReport {
        counterfactuals,
        probes,
        uncertainties,
        truncation_note,
        failures,
        complete: true,
    }
}

/// Outcome of a dedicated checklist call.
#[derive(Debug, Clone, PartialEq)]
pub struct ChecklistRun {
    pub report: ChecklistReport,
    /// Present when the backend answered; its spend must be recorded.
    pub response: Option<ModelResponse>,
}

/// Asks the backend for counterfactuals, probes and uncertainties over the
/// validation bundle. A backend failure yields an incomplete checklist.
pub fn run_counterfactuals_and_probes(
    bundle: &str,
    mut request: ModelRequest,
    backend: &dyn Backend,
    params: &ChecklistParams,
) -> ChecklistRun {
    request.context = bundle.to_string();
    match backend.invoke(&request) {
        Err(e) => ChecklistRun {
            report: ChecklistReport::incomplete(format!("checklist backend failure: {e}")),
            response: None,
        },
        Ok(resp) => {
            let report = match ChecklistPayload::from_structured(resp.structured.as_ref()) {
                Ok(p) => evaluate_checklist(&p, params),
                Err(e) => ChecklistReport::incomplete(format!("checklist payload: {e}")),
            };
            ChecklistRun {
                report,
                response: Some(resp),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Transcript, TranscriptBackend};
    use crate::contract::Level;
    use crate::phase::Phase;
    use serde_json::json;

    fn payload(cf: usize, probes: usize, unc: usize) -> ChecklistPayload {
        ChecklistPayload {
            counterfactuals: Some(
                (0..cf)
                    .map(|i| Counterfactual { scenario: format!("s{i}"), outcome: "holds".into() })
                    .collect(),
            ),
            probes: Some((0..probes).map(|i| Probe { question: format!("q{i}"), answer: "a".into() }).collect()),
            uncertainties: Some(
                (0..unc)
                    .map(|i| UncertaintyItem { item: format!("u{i}"), kind: UncertaintyKind::Epistemic, impact: Impact::Low })
                    .collect(),
            ),
        }
    }

    #[test]
    fn counts() {
        let p = ChecklistParams::default();
        assert!(evaluate_checklist(&payload(2, 3, 1), &p).passed());
        let r = evaluate_checklist(&payload(2, 2, 0), &p);
        assert_eq!(r.failures, ["adversarial probes: 2 < 3"]);
        let r = evaluate_checklist(&payload(1, 3, 4), &p);
        assert!(r.passed());
        assert_eq!(r.uncertainties.len(), 3);
        assert!(r.truncation_note.is_some());
    }

    fn request() -> ModelRequest {
        ModelRequest {
            phase: Phase::Validation,
            instructions: "DH3/DH4".into(),
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

    #[test]
    fn via_backend() {
        let structured = serde_json::to_value(payload(2, 3, 2)).unwrap();
        let line = json!({"match": {"phase": "4_validation"}, "response": {"response_id": "c1", "response_tokens": 5, "response_cost": 0.0, "response_time_ms": 1, "structured": structured}});
        let b = TranscriptBackend::new(Transcript::parse(&line.to_string()).unwrap());
        let run = run_counterfactuals_and_probes("bundle", request(), &b, &ChecklistParams::default());
        assert!(run.report.passed());
        assert_eq!(b.requests()[0].context, "bundle");

        let empty = TranscriptBackend::new(Transcript::default());
        let run = run_counterfactuals_and_probes("bundle", request(), &empty, &ChecklistParams::default());
        assert!(!run.report.complete);
        assert!(run.response.is_none());
    }
}
