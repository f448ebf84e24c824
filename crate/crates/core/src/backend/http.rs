use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde_json::{json, Value};

use super::{AttemptError, BackendConfig, ChatBackend, ChatRequest, ChatResponse};
use crate::error::{Error, Result};

static CONSTRUCTED: AtomicUsize = AtomicUsize::new(0);

/// How many HTTP transports this process has built; lets offline checks
/// prove no network client existed.
pub fn http_backends_constructed() -> usize {
    CONSTRUCTED.load(Ordering::SeqCst)
}

/// OpenAI-compatible chat-completions transport over blocking HTTP.
#[derive(Debug)]
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    token: Option<String>,
    extra_body: serde_json::Map<String, Value>,
}

impl HttpBackend {
    pub fn new(cfg: &BackendConfig) -> Result<Self> {
        CONSTRUCTED.fetch_add(1, Ordering::SeqCst);
        let token = match &cfg.auth_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| Error::Setup(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: cfg.endpoint.clone(),
            model: cfg.model.clone(),
            token,
            extra_body: cfg.extra_body.clone(),
        })
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let p = &request.params;
        let mut body = json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": p.temperature,
            "top_p": p.top_p,
            "top_k": p.top_k,
            "max_tokens": p.max_tokens,
            "n": 1,
        });
        let obj = body.as_object_mut().expect("object literal");
        for (k, v) in &self.extra_body {
            obj.insert(k.clone(), v.clone());
        }
        body
    }
}

/// Pull the first choice's text and token usage out of a response body.
pub(crate) fn parse_response(body: &Value) -> Result<ChatResponse> {
    let text = body
        .pointer("/choices/0/message/content")
        .or_else(|| body.pointer("/choices/0/text"))
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Protocol(format!("no choice text in response {body}")))?;
    Ok(ChatResponse {
        text: text.to_string(),
        prompt_tokens: body.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        completion_tokens: body.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    })
}

impl ChatBackend for HttpBackend {
    fn attempt(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, AttemptError> {
        let mut req = self.agent.post(&self.endpoint).header("content-type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(self.body(request)).map_err(|e| AttemptError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(AttemptError::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(AttemptError::Permanent(Error::Backend(format!("HTTP {status}: {detail}"))));
        }
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| AttemptError::Permanent(Error::Protocol(format!("malformed body: {e}"))))?;
        parse_response(&body).map_err(AttemptError::Permanent)
    }

    fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn model(&self) -> &str {
        &self.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_shapes() {
        let chat = json!({"choices": [{"message": {"content": "hi"}}], "usage": {"prompt_tokens": 3, "completion_tokens": 1}});
        let r = parse_response(&chat).unwrap();
        assert_eq!((r.text.as_str(), r.prompt_tokens, r.completion_tokens), ("hi", Some(3), Some(1)));
        assert_eq!(parse_response(&json!({"choices": [{"text": "t"}]})).unwrap().text, "t");
        assert!(matches!(parse_response(&json!({"choices": []})), Err(Error::Protocol(_))));
    }
}
