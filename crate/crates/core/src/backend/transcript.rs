//! JSONL transcript replay.
//!
//! Each line is one entry: `{"match": {"phase": .., "instruction_hash": ..},
//! "response": {..}}`. An entry may carry `"error"` instead of a response to
//! script a backend failure. Entries are consumed at most once.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Backend, BackendError, ModelRequest, ModelResponse};
use crate::phase::Phase;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSpec {
    pub phase: Phase,
    /// Prefix of the request's instruction hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction_hash: Option<String>,
}

impl MatchSpec {
    fn accepts(&self, req: &ModelRequest, req_hash: &str) -> bool {
        self.phase == req.phase
            && self
                .instruction_hash
                .as_deref()
                .is_none_or(|h| req_hash.starts_with(h))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    #[serde(rename = "match")]
    pub match_spec: MatchSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<ModelResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("cannot read transcript: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn parse(text: &str) -> Result<Transcript, TranscriptError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry = parse_line(line).map_err(|message| TranscriptError::Line { line: i + 1, message })?;
            entries.push(entry);
        }
        Ok(Transcript { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }
}

fn parse_line(line: &str) -> Result<TranscriptEntry, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| format!("malformed JSON: {e}"))?;
    if let Some(phase) = v.pointer("/match/phase").and_then(Value::as_str) {
        phase.parse::<Phase>().map_err(|e| e.to_string())?;
    }
    if let Some(resp) = v.get("response") {
        for key in ["response_tokens", "response_cost", "response_time_ms"] {
            if let Some(x) = resp.get(key).and_then(Value::as_f64) {
                if x < 0.0 {
                    return Err(format!("{key} must be non-negative, got {x}"));
                }
            }
        }
        if let Some(m) = resp.get("uncertainty_mus").and_then(Value::as_f64) {
            if !(0.0..=100.0).contains(&m) {
                return Err(format!("uncertainty_mus {m} outside [0, 100]"));
            }
        }
    }
    let entry: TranscriptEntry = serde_json::from_value(v).map_err(|e| e.to_string())?;
    if entry.response.is_some() == entry.error.is_some() {
        return Err("entry needs exactly one of \"response\" or \"error\"".into());
    }
    Ok(entry)
}

pub fn load_transcript(path: impl AsRef<Path>) -> Result<Transcript, TranscriptError> {
    Transcript::parse(&std::fs::read_to_string(path)?)
}

#[derive(Debug)]
struct Replay {
    entries: Vec<TranscriptEntry>,
    used: Vec<bool>,
    requests: Vec<ModelRequest>,
}

/// Replays a transcript. Consumption is serialized, so concurrent callers
/// see a total order.
#[derive(Debug)]
pub struct TranscriptBackend {
    inner: Mutex<Replay>,
}

impl TranscriptBackend {
    pub fn new(transcript: Transcript) -> Self {
        let n = transcript.entries.len();
        Self {
            inner: Mutex::new(Replay {
                entries: transcript.entries,
                used: vec![false; n],
                requests: Vec::new(),
            }),
        }
    }

    pub fn remaining(&self) -> usize {
        self.lock().used.iter().filter(|u| !**u).count()
    }

    /// Every request received so far, in arrival order.
    pub fn requests(&self) -> Vec<ModelRequest> {
        self.lock().requests.clone()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Replay> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl Backend for TranscriptBackend {
    fn invoke(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let mut r = self.lock();
        r.requests.push(request.clone());
        let Some(next) = r.used.iter().position(|u| !u) else {
            return Err(BackendError::Underrun(request.phase));
        };
        let hash = request.instruction_hash();
        let idx = if r.entries[next].match_spec.accepts(request, &hash) {
            next
        } else {
            let keyed = (next + 1..r.entries.len()).find(|&i| {
                !r.used[i]
                    && r.entries[i].match_spec.instruction_hash.is_some()
                    && r.entries[i].match_spec.accepts(request, &hash)
            });
            match keyed {
                Some(i) => i,
                None => {
                    return Err(BackendError::Mismatch {
                        phase: request.phase,
                        detail: format!("next entry expects {}", r.entries[next].match_spec.phase),
                    })
                }
            }
        };
        r.used[idx] = true;
        let entry = &r.entries[idx];
        match (&entry.response, &entry.error) {
            (Some(resp), _) => Ok(resp.clone()),
            (None, Some(msg)) => Err(BackendError::Scripted {
                phase: request.phase,
                message: msg.clone(),
            }),
            (None, None) => unreachable!("validated at load"),
        }
    }
}
