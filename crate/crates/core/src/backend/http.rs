//! Single-endpoint JSON client.
//!
//! Request body keys follow the contract's `responses_api` snippet
//! (`model`, `reasoning_effort`, `previous_response_id`). The reply must be a
//! JSON object carrying the [`ModelResponse`] fields; `id`, `output_text` and
//! `usage.total_tokens` are accepted as aliases.

use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{Backend, BackendError, ModelRequest, ModelResponse, ToolInvocation};

pub const API_TOKEN_ENV: &str = "PARCER_API_TOKEN";
pub const API_URL_ENV: &str = "PARCER_API_URL";

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    token: Option<String>,
    /// Used to price replies that report tokens but no cost.
    price_per_token: f64,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, token: Option<String>, price_per_token: f64) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
            model: model.into(),
            token,
            price_per_token,
        })
    }

    /// Endpoint from `PARCER_API_URL`, bearer token from `PARCER_API_TOKEN`.
    pub fn from_env(model: impl Into<String>, price_per_token: f64) -> Result<Self, BackendError> {
        let endpoint = std::env::var(API_URL_ENV).map_err(|_| BackendError::Config(format!("{API_URL_ENV} is not set")))?;
        Self::new(endpoint, model, std::env::var(API_TOKEN_ENV).ok(), price_per_token)
    }

    pub fn request_body(&self, req: &ModelRequest) -> Value {
        json!({
            "model": self.model,
            "reasoning_effort": req.reasoning_effort.as_str(),
            "previous_response_id": req.previous_response_id,
            "instructions": req.instructions,
            "input": req.context,
            "verbosity": req.verbosity.as_str(),
            "temperature": req.temperature,
            "seed": req.seed,
            "max_output_tokens": req.max_output_tokens,
            "tool_allowance": req.tool_allowance,
            "use_web": req.use_web,
        })
    }
}

fn num(v: &Value, keys: &[&str]) -> Option<f64> {
    keys.iter().find_map(|k| v.pointer(k).and_then(Value::as_f64))
}

pub(crate) fn parse_reply(v: &Value, elapsed_ms: f64, price_per_token: f64) -> Result<ModelResponse, BackendError> {
    let bad = |m: &str| BackendError::InvalidResponse(m.to_string());
    let response_id = ["/response_id", "/id"]
        .iter()
        .find_map(|k| v.pointer(k).and_then(Value::as_str))
        .ok_or_else(|| bad("missing response id"))?
        .to_string();
    let text = ["/text", "/output_text"]
        .iter()
        .find_map(|k| v.pointer(k).and_then(Value::as_str))
        .unwrap_or_default()
        .to_string();
    let tokens = num(v, &["/response_tokens", "/usage/total_tokens"]).unwrap_or(0.0);
    if tokens < 0.0 {
        return Err(bad("negative token count"));
    }
    let tool_calls = match v.get("tool_calls") {
        Some(t) => serde_json::from_value::<Vec<ToolInvocation>>(t.clone()).map_err(|e| bad(&e.to_string()))?,
        None => Vec::new(),
    };
    Ok(ModelResponse {
        response_id,
        text,
        structured: v.get("structured").cloned(),
        response_tokens: tokens as u64,
        response_cost: num(v, &["/response_cost"]).unwrap_or(tokens * price_per_token),
        response_time_ms: num(v, &["/response_time_ms"]).unwrap_or(elapsed_ms),
        uncertainty_mus: num(v, &["/uncertainty_mus"]).map(|m| m.clamp(0.0, 100.0)),
        tool_calls,
    })
}

impl Backend for HttpBackend {
    fn invoke(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let started = Instant::now();
        let mut call = self.client.post(&self.endpoint).json(&self.request_body(request));
        if let Some(t) = &self.token {
            call = call.bearer_auth(t);
        }
        let reply = call.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = reply.status();
        if !status.is_success() {
            return Err(BackendError::Transport(format!("HTTP {status}")));
        }
        let body: Value = reply.json().map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        parse_reply(&body, started.elapsed().as_secs_f64() * 1000.0, self.price_per_token)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::Level;
    use crate::phase::Phase;

    #[test]
    fn body_mirrors_snippet_keys() {
        let b = HttpBackend::new("https://example.invalid", "gpt-5", None, 0.0).unwrap();
        let req = ModelRequest {
            phase: Phase::Plan,
            instructions: "i".into(),
            context: "c".into(),
            previous_response_id: Some("resp_1".into()),
            reasoning_effort: Level::Medium,
            verbosity: Level::Low,
            temperature: 0.2,
            seed: None,
            tool_allowance: 3,
            max_output_tokens: Some(2000),
            use_web: false,
        };
        let body = b.request_body(&req);
        assert_eq!(body["model"], "gpt-5");
        assert_eq!(body["reasoning_effort"], "medium");
        assert_eq!(body["previous_response_id"], "resp_1");
    }

    #[test]
    fn reply_aliases() {
        let v = json!({"id": "r9", "output_text": "hi", "usage": {"total_tokens": 100}});
        let r = parse_reply(&v, 12.0, 0.001).unwrap();
        assert_eq!(r.response_id, "r9");
        assert_eq!(r.response_tokens, 100);
        assert!((r.response_cost - 0.1).abs() < 1e-12);
        assert_eq!(r.response_time_ms, 12.0);
        assert!(parse_reply(&json!({}), 0.0, 0.0).is_err());
    }
}
