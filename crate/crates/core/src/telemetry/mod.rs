//! Spans, events, metrics export, redaction, sampling and retention.

mod redact;
mod retention;
mod sink;
mod span;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use redact::{has_pii, redact, redact_value, KINDS as REDACTION_KINDS};
pub use retention::{prune_dir, prune_retention, LogEntry, LogKind, RetentionPolicy, DAY_MS};
pub use sink::{JsonlSink, SinkRecord};
pub use span::{format_span_name, SpanHandle, TraceSpan, Tracer};

use crate::budget::AdjustmentEvent;
use crate::hygiene::{ReviewMetrics, TelemetryBrief};

/// 16 lowercase hex digits derived from `material`, starting with a letter
/// so that redaction never mistakes an id for a card or phone number.
pub fn opaque_id(material: &str) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(material.as_bytes());
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    let first = char::from(b'a' + digest[0] % 6);
    format!("{first}{}", &hex[1..])
}

#[derive(Debug, thiserror::Error)]
pub enum TelemetryError {
    #[error("span {0} is not open")]
    SpanNotOpen(String),
    #[error("span {0} still has open children")]
    ChildrenOpen(String),
    #[error("sampling rate {0} outside [0, 1]")]
    BadRate(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Info,
    GateFailure,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryEvent {
    pub trace_id: String,
    pub kind: EventKind,
    pub name: String,
    pub at_unix_ms: i64,
    pub attributes: BTreeMap<String, Value>,
}

/// Keep/drop decision for one event. Only informational events can be
/// dropped; one draw is consumed per informational event.
pub fn sample_event<R: Rng + ?Sized>(event: &TelemetryEvent, rate: f64, rng: &mut R) -> Result<bool, TelemetryError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(TelemetryError::BadRate(rate));
    }
    if event.kind != EventKind::Info {
        return Ok(true);
    }
    Ok(rng.gen::<f64>() < rate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub phase: String,
    pub kind: String,
    pub message: String,
}

/// Everything a metrics export can carry. `render` keeps only the
/// sections named in the contract's include list.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsExport {
    pub review_rubric: Option<ReviewMetrics>,
    pub telemetry_brief: TelemetryBrief,
    pub failures: Vec<FailureRecord>,
    pub budget_adjust_log: Vec<AdjustmentEvent>,
}

impl MetricsExport {
    pub fn render(&self, include: &[String]) -> Value {
        let mut out = Map::new();
        for section in include {
            let v = match section.as_str() {
                "review_rubric" => serde_json::to_value(&self.review_rubric),
                "telemetry_brief" => serde_json::to_value(self.telemetry_brief),
                "failures" => serde_json::to_value(&self.failures),
                "budget_adjust_log" => serde_json::to_value(&self.budget_adjust_log),
                _ => continue,
            };
            out.insert(section.clone(), v.expect("export sections serialize"));
        }
        Value::Object(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ev(kind: EventKind) -> TelemetryEvent {
        TelemetryEvent { trace_id: "t".into(), kind, name: "x".into(), at_unix_ms: 0, attributes: BTreeMap::new() }
    }

    #[test]
    fn sampling_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let info = ev(EventKind::Info);
        assert!((0..100).all(|_| sample_event(&info, 1.0, &mut rng).unwrap()));
        assert!((0..100).all(|_| !sample_event(&info, 0.0, &mut rng).unwrap()));
        assert!((0..100).all(|_| sample_event(&ev(EventKind::GateFailure), 0.0, &mut rng).unwrap()));
        assert!(sample_event(&info, 1.5, &mut rng).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let kept = (0..10_000).filter(|_| sample_event(&info, 0.5, &mut rng).unwrap()).count();
        assert!((4800..=5200).contains(&kept), "{kept}");
    }

    #[test]
    fn render_sections() {
        let m = MetricsExport {
            review_rubric: None,
            telemetry_brief: TelemetryBrief::default(),
            failures: vec![],
            budget_adjust_log: vec![],
        };
        let all: Vec<String> = crate::contract::METRICS_SECTIONS.iter().map(|s| s.to_string()).collect();
        let v = m.render(&all);
        assert_eq!(v.as_object().unwrap().len(), 4);
        let v = m.render(&all[1..2]);
        assert_eq!(v.as_object().unwrap().keys().collect::<Vec<_>>(), ["telemetry_brief"]);
    }
}
