//! Deterministic scripted backend.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ChatRequest, ChatResponse};

/// Responses chosen by substring match on the prompt; cycled in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: String,
    pub responses: Vec<String>,
}

/// On-disk mock script. A bare JSON array is read as `responses`.
///
/// Rules are consulted first, then the queue, then the default.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub responses: Vec<String>,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default: Option<String>,
}

impl MockScript {
    pub fn parse(text: &str) -> Result<Self, BackendError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| BackendError::Transcript(format!("mock script: {e}")))?;
        if value.is_array() {
            let responses = serde_json::from_value(value)
                .map_err(|e| BackendError::Transcript(format!("mock script: {e}")))?;
            return Ok(Self {
                responses,
                ..Self::default()
            });
        }
        serde_json::from_value(value).map_err(|e| BackendError::Transcript(format!("mock script: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Transcript(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

type Responder = dyn Fn(usize, &ChatRequest) -> Result<ChatResponse, BackendError> + Send + Sync;

enum Source {
    Script {
        queue: Mutex<VecDeque<String>>,
        rules: Vec<MockRule>,
        cursors: Mutex<Vec<usize>>,
        default: Option<String>,
    },
    Function(Box<Responder>),
}

pub struct MockBackend {
    source: Source,
    calls: Mutex<usize>,
}

impl MockBackend {
    /// Answers with the given responses in order, then fails.
    pub fn queue<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from_script(MockScript {
            responses: responses.into_iter().map(Into::into).collect(),
            ..MockScript::default()
        })
    }

    pub fn from_script(script: MockScript) -> Self {
        let cursors = vec![0; script.rules.len()];
        Self {
            source: Source::Script {
                queue: Mutex::new(script.responses.into()),
                rules: script.rules,
                cursors: Mutex::new(cursors),
                default: script.default,
            },
            calls: Mutex::new(0),
        }
    }

    /// Answers by calling `respond` with the zero-based call index.
    pub fn from_fn<F>(respond: F) -> Self
    where
        F: Fn(usize, &ChatRequest) -> Result<ChatResponse, BackendError> + Send + Sync + 'static,
    {
        Self {
            source: Source::Function(Box::new(respond)),
            calls: Mutex::new(0),
        }
    }

    /// Number of `complete` calls so far.
    pub fn calls(&self) -> usize {
        *self.calls.lock().expect("mock lock")
    }
}

impl Backend for MockBackend {
    fn id(&self) -> String {
        "mock".to_string()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let index = {
            let mut calls = self.calls.lock().expect("mock lock");
            *calls += 1;
            *calls - 1
        };
        match &self.source {
            Source::Function(respond) => respond(index, request),
            Source::Script {
                queue,
                rules,
                cursors,
                default,
            } => {
                let prompt = request.prompt();
                if let Some(position) = rules
                    .iter()
                    .position(|rule| !rule.responses.is_empty() && prompt.contains(&rule.contains))
                {
                    let mut cursors = cursors.lock().expect("mock lock");
                    let rule = &rules[position];
                    let text = rule.responses[cursors[position] % rule.responses.len()].clone();
                    cursors[position] += 1;
                    return Ok(ChatResponse::stop(text));
                }
                if let Some(text) = queue.lock().expect("mock lock").pop_front() {
                    return Ok(ChatResponse::stop(text));
                }
                default
                    .clone()
                    .map(ChatResponse::stop)
                    .ok_or(BackendError::ScriptExhausted { calls: index })
            }
        }
    }
}
