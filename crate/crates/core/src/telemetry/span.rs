//! Phase and action spans.

use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::TelemetryError;
use crate::clock::Clock;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSpan {
    pub trace_id: String,
    pub span_id: String,
    pub parent_span_id: Option<String>,
    pub name: String,
    pub start_unix_ms: i64,
    pub end_unix_ms: i64,
    pub attributes: BTreeMap<String, Value>,
}

/// Handle to an open span. Not `Clone`: one owner ends it.
#[derive(Debug, PartialEq, Eq)]
pub struct SpanHandle {
    span_id: String,
}

impl SpanHandle {
    /// Refers to a span by id, e.g. one recorded elsewhere.
    pub fn from_id(span_id: impl Into<String>) -> Self {
        Self { span_id: span_id.into() }
    }

    pub fn span_id(&self) -> &str {
        &self.span_id
    }
}

#[derive(Debug, Clone)]
struct OpenSpan {
    span_id: String,
    parent: Option<String>,
    name: String,
    start: i64,
}

/// Fills the `phase` and `action` slots of a span format such as
/// `"phase|action"`; `{{phase}}` style slots work too.
pub fn format_span_name(format: &str, phase: &str, action: &str) -> String {
    let re = Regex::new(r"\{\{\s*(phase|action)\s*\}\}|\b(phase|action)\b").expect("static pattern");
    re.replace_all(format, |c: &regex::Captures<'_>| {
        let slot = c.get(1).or(c.get(2)).map(|m| m.as_str()).unwrap_or_default();
        if slot == "phase" { phase } else { action }.to_string()
    })
    .into_owned()
}

/// Per-run span recorder. Nested spans parent to the innermost open span
/// and must close before it.
#[derive(Debug)]
pub struct Tracer {
    trace_id: String,
    span_format: String,
    next_id: u64,
    open: Vec<OpenSpan>,
}

impl Tracer {
    pub fn new(trace_id: impl Into<String>, span_format: impl Into<String>) -> Self {
        Self {
            trace_id: trace_id.into(),
            span_format: span_format.into(),
            next_id: 0,
            open: Vec::new(),
        }
    }

    pub fn trace_id(&self) -> &str {
        &self.trace_id
    }

    pub fn open_count(&self) -> usize {
        self.open.len()
    }

    pub fn begin_span(&mut self, phase: &str, action: &str, clock: &dyn Clock) -> SpanHandle {
        self.next_id += 1;
        let span_id = super::opaque_id(&format!("{}/{}", self.trace_id, self.next_id));
        self.open.push(OpenSpan {
            span_id: span_id.clone(),
            parent: self.open.last().map(|s| s.span_id.clone()),
            name: format_span_name(&self.span_format, phase, action),
            start: clock.now_ms(),
        });
        SpanHandle { span_id }
    }

    pub fn end_span(&mut self, handle: &SpanHandle, clock: &dyn Clock) -> Result<TraceSpan, TelemetryError> {
        self.end_span_with(handle, clock, BTreeMap::new())
    }

    pub fn end_span_with(
        &mut self,
        handle: &SpanHandle,
        clock: &dyn Clock,
        attributes: BTreeMap<String, Value>,
    ) -> Result<TraceSpan, TelemetryError> {
        let pos = self
            .open
            .iter()
            .position(|s| s.span_id == handle.span_id)
            .ok_or_else(|| TelemetryError::SpanNotOpen(handle.span_id.clone()))?;
        if pos + 1 != self.open.len() {
            return Err(TelemetryError::ChildrenOpen(handle.span_id.clone()));
        }
        let s = self.open.pop().expect("position found");
        Ok(TraceSpan {
            trace_id: self.trace_id.clone(),
            span_id: s.span_id,
            parent_span_id: s.parent,
            name: s.name,
            start_unix_ms: s.start,
            end_unix_ms: clock.now_ms().max(s.start),
            attributes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::FixedClock;

    #[test]
    fn names_and_nesting() {
        let clock = FixedClock::new(1000);
        let mut t = Tracer::new("run-1", "phase|action");
        let phase = t.begin_span("4_validation", "run", &clock);
        let child = t.begin_span("4_validation", "apply_gates", &clock);
        assert!(matches!(t.end_span(&phase, &clock), Err(TelemetryError::ChildrenOpen(_))));
        clock.advance(5.0);
        let c = t.end_span(&child, &clock).unwrap();
        assert_eq!(c.name, "4_validation|apply_gates");
        let p = t.end_span(&phase, &clock).unwrap();
        assert_eq!(c.parent_span_id.as_deref(), Some(p.span_id.as_str()));
        assert_eq!(p.parent_span_id, None);
        assert_eq!(c.end_unix_ms - c.start_unix_ms, 5);
        assert!(matches!(t.end_span(&phase, &clock), Err(TelemetryError::SpanNotOpen(_))));
        assert!(t.end_span(&SpanHandle::from_id("nope"), &clock).is_err());
    }

    #[test]
    fn slot_styles() {
        assert_eq!(format_span_name("{{phase}}/{{action}}", "2_plan", "run"), "2_plan/run");
        assert_eq!(format_span_name("phase|action", "4_validation", "score"), "4_validation|score");
    }
}
