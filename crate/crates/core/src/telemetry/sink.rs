//! Line-delimited JSON sink for spans and events.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::Serialize;
use serde_json::Value;

use super::{redact_value, TelemetryError, TelemetryEvent, TraceSpan};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum SinkRecord {
    Span(TraceSpan),
    Event(TelemetryEvent),
}

enum Target {
    File(File),
    Memory(Vec<u8>),
}

/// Append-only sink. Each record is redacted (when enabled) and written as
/// one line under a lock, so concurrent appends never interleave.
pub struct JsonlSink {
    target: Mutex<Target>,
    redact: bool,
}

impl JsonlSink {
    pub fn create(path: &Path, redact: bool) -> Result<Self, TelemetryError> {
        let f = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(Self { target: Mutex::new(Target::File(f)), redact })
    }

    pub fn in_memory(redact: bool) -> Self {
        Self { target: Mutex::new(Target::Memory(Vec::new())), redact }
    }

    pub fn append(&self, record: &SinkRecord) -> Result<(), TelemetryError> {
        let mut v: Value = serde_json::to_value(record)?;
        if self.redact {
            redact_value(&mut v);
        }
        let mut line = serde_json::to_vec(&v)?;
        line.push(b'\n');
        let mut t = self.target.lock().unwrap_or_else(|e| e.into_inner());
        match &mut *t {
            Target::File(f) => f.write_all(&line)?,
            Target::Memory(buf) => buf.extend_from_slice(&line),
        }
        Ok(())
    }

    /// Buffered contents for an in-memory sink; empty for file sinks.
    pub fn contents(&self) -> String {
        match &*self.target.lock().unwrap_or_else(|e| e.into_inner()) {
            Target::Memory(buf) => String::from_utf8_lossy(buf).into_owned(),
            Target::File(_) => String::new(),
        }
    }

    pub fn flush(&self) -> Result<(), TelemetryError> {
        if let Target::File(f) = &mut *self.target.lock().unwrap_or_else(|e| e.into_inner()) {
            f.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::EventKind;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    #[test]
    fn redacts_before_write() {
        let sink = JsonlSink::in_memory(true);
        let mut attributes = BTreeMap::new();
        attributes.insert("note".to_string(), Value::from("ping ops@corp.example"));
        sink.append(&SinkRecord::Event(TelemetryEvent {
            trace_id: "t".into(),
            kind: EventKind::Info,
            name: "n".into(),
            at_unix_ms: 1,
            attributes,
        }))
        .unwrap();
        let s = sink.contents();
        assert!(s.contains("[REDACTED:email]") && !s.contains("corp.example"), "{s}");
    }

    #[test]
    fn concurrent_lines_stay_whole() {
        let sink = Arc::new(JsonlSink::in_memory(false));
        std::thread::scope(|s| {
            for i in 0..4 {
                let sink = sink.clone();
                s.spawn(move || {
                    for j in 0..50 {
                        let ev = TelemetryEvent {
                            trace_id: format!("t{i}"),
                            kind: EventKind::Info,
                            name: format!("e{j}"),
                            at_unix_ms: j,
                            attributes: BTreeMap::new(),
                        };
                        sink.append(&SinkRecord::Event(ev)).unwrap();
                    }
                });
            }
        });
        let text = sink.contents();
        assert_eq!(text.lines().count(), 200);
        assert!(text.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
    }
}
