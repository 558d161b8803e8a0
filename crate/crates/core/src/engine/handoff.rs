//! Handoff bundle and changelog rendering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::prompt::fill_template;
use crate::hygiene::{ReviewMetrics, TelemetryBrief};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangelogEntry {
    pub timestamp: String,
    pub change: String,
}

impl ChangelogEntry {
    /// Renders with the contract's changelog format.
    pub fn render(&self, format: &str) -> String {
        let mut v = BTreeMap::new();
        v.insert("timestamp", self.timestamp.clone());
        v.insert("change", self.change.clone());
        fill_template(format, &v)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HandoffBundle {
    pub partial: bool,
    pub summary: String,
    pub assumptions: Vec<String>,
    pub limitations: Vec<String>,
    pub next_steps: Vec<String>,
    pub diffs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub application_instructions: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub review_metrics: Option<ReviewMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub telemetry_brief: Option<TelemetryBrief>,
    pub changelog: Vec<String>,
}

pub(crate) fn strings(v: Option<&Value>) -> Vec<String> {
    match v {
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(|i| match i {
                Value::String(s) => Some(s.clone()),
                Value::Null => None,
                other => Some(other.to_string()),
            })
            .collect(),
        Some(Value::String(s)) => vec![s.clone()],
        _ => Vec::new(),
    }
}

pub(crate) fn text(v: Option<&Value>) -> Option<String> {
    v.and_then(Value::as_str).map(str::to_string)
}
