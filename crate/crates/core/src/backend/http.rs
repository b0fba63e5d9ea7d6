//! Live chat-completion client over HTTP.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Backend, BackendError, ChatRequest, ChatResponse, FinishReason, Usage};

pub const ENDPOINT_VAR: &str = "TARGEN_ENDPOINT";
pub const API_KEY_VAR: &str = "TARGEN_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpConfig {
    /// Reads the endpoint and API key from `TARGEN_ENDPOINT` and
    /// `TARGEN_API_KEY`.
    pub fn from_env() -> Result<Self, BackendError> {
        let endpoint = std::env::var(ENDPOINT_VAR)
            .map_err(|_| BackendError::InvalidRequest(format!("{ENDPOINT_VAR} is not set")))?;
        Ok(Self {
            endpoint,
            api_key: std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(120),
        })
    }
}

/// One request per `complete` call; wrap in a
/// [`PolicyBackend`](super::PolicyBackend) for retries.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn classify_status(status: u16, body: String) -> BackendError {
        match status {
            429 => BackendError::RateLimited(body),
            408 => BackendError::Timeout(body),
            401 | 403 => BackendError::Unauthorized { status, message: body },
            500..=599 => BackendError::ServerError { status, message: body },
            _ => BackendError::Rejected { status, message: body },
        }
    }

    fn decode(body: &str) -> Result<ChatResponse, BackendError> {
        let wire: WireResponse =
            serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::MalformedResponse("response has no choices".into()))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("stop") | None => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            Some(_) => FinishReason::Other,
        };
        let content = match (choice.message.content, finish_reason) {
            (Some(content), _) => content,
            (None, FinishReason::Stop) => {
                return Err(BackendError::MalformedResponse("finished response has no content".into()))
            }
            (None, _) => String::new(),
        };
        Ok(ChatResponse {
            content,
            finish_reason,
            usage: wire.usage.map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            }),
        })
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("live:{}", self.config.endpoint)
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut builder = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(e.to_string())
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(e.to_string())
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        if !(200..300).contains(&status) {
            return Err(Self::classify_status(status, text));
        }
        Self::decode(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_choices() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hi"},"finish_reason":"stop"}],"usage":{"prompt_tokens":3,"completion_tokens":1}}"#;
        let response = HttpBackend::decode(body).unwrap();
        assert_eq!(response.content, "hi");
        assert_eq!(response.finish_reason, FinishReason::Stop);
        assert_eq!(response.usage.unwrap().prompt_tokens, 3);
    }

    #[test]
    fn malformed_bodies() {
        assert!(matches!(HttpBackend::decode("<html>"), Err(BackendError::MalformedResponse(_))));
        assert!(matches!(
            HttpBackend::decode(r#"{"choices":[]}"#),
            Err(BackendError::MalformedResponse(_))
        ));
        assert!(matches!(
            HttpBackend::decode(r#"{"choices":[{"message":{},"finish_reason":"stop"}]}"#),
            Err(BackendError::MalformedResponse(_))
        ));
        let truncated = HttpBackend::decode(r#"{"choices":[{"message":{},"finish_reason":"length"}]}"#).unwrap();
        assert_eq!(truncated.finish_reason, FinishReason::Length);
    }

    #[test]
    fn status_classes() {
        use crate::backend::ErrorClass;
        assert_eq!(HttpBackend::classify_status(429, String::new()).class(), ErrorClass::RateLimited);
        assert_eq!(HttpBackend::classify_status(503, String::new()).class(), ErrorClass::ServerError);
        assert_eq!(HttpBackend::classify_status(401, String::new()).class(), ErrorClass::Fatal);
        assert_eq!(HttpBackend::classify_status(400, String::new()).class(), ErrorClass::Fatal);
    }
}
