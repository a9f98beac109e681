use std::time::Duration;

use serde_json::{json, Value};

use super::{AttemptError, ChatBackend, ChatRequest, LlmError};

pub const API_KEY_ENV: &str = "STANCE_LLM_API_KEY";

/// POSTs to `{base_url}/chat/completions` of an OpenAI-compatible server.
pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: String,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpBackend {
            agent,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
        }
    }

    /// Reads the credential from `STANCE_LLM_API_KEY`.
    pub fn from_env(base_url: impl Into<String>, timeout: Duration) -> Result<Self, LlmError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| LlmError::Config(format!("{API_KEY_ENV} is not set")))?;
        Ok(Self::new(base_url, key, timeout))
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }
}

fn request_body(request: &ChatRequest) -> String {
    json!({
        "model": request.model,
        "messages": [{"role": "user", "content": request.prompt}],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    })
    .to_string()
}

/// Content of the first choice.
pub(crate) fn extract_content(body: &str) -> Result<String, LlmError> {
    let value: Value = serde_json::from_str(body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::MalformedResponse("no choices[0].message.content".into()))
}

impl ChatBackend for HttpBackend {
    fn send(&self, request: &ChatRequest) -> Result<String, AttemptError> {
        let url = format!("{}/chat/completions", self.base_url);
        let result = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(request_body(request));
        let mut response = match result {
            Ok(r) => r,
            Err(e @ (ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed)) => {
                return Err(AttemptError::Transient(e.to_string()))
            }
            Err(e) => return Err(AttemptError::Fatal(LlmError::Transport(e.to_string()))),
        };
        let status = response.status().as_u16();
        let body = match response.body_mut().read_to_string() {
            Ok(b) => b,
            Err(e) if status == 200 => return Err(AttemptError::Transient(e.to_string())),
            Err(_) => String::new(),
        };
        match status {
            200..=299 => extract_content(&body).map_err(AttemptError::Fatal),
            429 | 500..=599 => Err(AttemptError::Transient(format!("HTTP {status}"))),
            _ => Err(AttemptError::Fatal(LlmError::Http { status, body })),
        }
    }

    fn is_remote(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_shape() {
        let body: Value = serde_json::from_str(&request_body(&ChatRequest::new("gpt-4o", "hi"))).unwrap();
        assert_eq!(body["model"], "gpt-4o");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hi");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 8);
    }

    #[test]
    fn content_extraction() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"Against"}}]}"#;
        assert_eq!(extract_content(ok).unwrap(), "Against");
        assert!(matches!(extract_content("{\"choices\":[]}"), Err(LlmError::MalformedResponse(_))));
        assert!(matches!(extract_content("not json"), Err(LlmError::MalformedResponse(_))));
    }
}
