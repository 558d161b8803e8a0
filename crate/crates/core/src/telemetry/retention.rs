//! Retention pruning for run logs and review exports.

use std::path::Path;
use std::time::UNIX_EPOCH;

use serde::{Deserialize, Serialize};

use crate::contract::TelemetrySpec;

pub const DAY_MS: i64 = 86_400_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    RunLog,
    ReviewExport,
}

impl LogKind {
    /// Classifies an output file by its suffix.
    pub fn of_file(name: &str) -> Option<LogKind> {
        if name.ends_with(".metrics.json") {
            Some(LogKind::ReviewExport)
        } else if name.ends_with(".run.json") || name.ends_with(".trace.jsonl") {
            Some(LogKind::RunLog)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetentionPolicy {
    pub run_logs_ttl_days: u32,
    pub review_exports_ttl_days: u32,
}

impl RetentionPolicy {
    pub fn ttl_ms(&self, kind: LogKind) -> i64 {
        let days = match kind {
            LogKind::RunLog => self.run_logs_ttl_days,
            LogKind::ReviewExport => self.review_exports_ttl_days,
        };
        i64::from(days) * DAY_MS
    }

    pub fn expired(&self, kind: LogKind, written_at_ms: i64, now_ms: i64) -> bool {
        now_ms - written_at_ms > self.ttl_ms(kind)
    }
}

impl From<&TelemetrySpec> for RetentionPolicy {
    fn from(t: &TelemetrySpec) -> Self {
        Self {
            run_logs_ttl_days: t.run_logs_ttl_days,
            review_exports_ttl_days: t.review_exports_ttl_days,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub kind: LogKind,
    pub written_at_ms: i64,
    pub name: String,
}

/// Removes expired entries in place; returns how many were removed.
pub fn prune_retention(store: &mut Vec<LogEntry>, now_ms: i64, policy: &RetentionPolicy) -> usize {
    let before = store.len();
    store.retain(|e| !policy.expired(e.kind, e.written_at_ms, now_ms));
    before - store.len()
}

/// Deletes expired output files in `dir`, aged by modification time.
pub fn prune_dir(dir: &Path, now_ms: i64, policy: &RetentionPolicy) -> std::io::Result<usize> {
    let mut removed = 0;
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(kind) = LogKind::of_file(&name) else { continue };
        let modified = entry.metadata()?.modified()?;
        let written = modified
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0);
        if policy.expired(kind, written, now_ms) {
            std::fs::remove_file(entry.path())?;
            removed += 1;
        }
    }
    Ok(removed)
}
