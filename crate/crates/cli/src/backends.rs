//! Backend selection: `live`, `mock:<script>` or `replay:<transcript>`,
//! optionally recorded to a transcript file.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use targen_core::backend::{
    Backend, HttpBackend, HttpConfig, MockBackend, MockScript, PolicyBackend, RateLimiter, RecordingBackend,
    ReplayBackend, RetryPolicy, SystemClock, API_KEY_VAR, ENDPOINT_VAR,
};

use crate::config::Config;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    Live,
    Mock(String),
    Replay(String),
}

impl BackendChoice {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        match text.split_once(':') {
            _ if text == "live" => Ok(Self::Live),
            Some(("mock", path)) if !path.is_empty() => Ok(Self::Mock(path.to_string())),
            Some(("replay", path)) if !path.is_empty() => Ok(Self::Replay(path.to_string())),
            _ => Err(CliError::Validation(format!(
                "backend \"{text}\" is not one of live, mock:<file>, replay:<file>"
            ))),
        }
    }
}

/// The endpoint comes from the config file or the environment; the API key
/// only from the environment.
fn live(config: &Config, section: &str, concurrency: usize) -> Result<Box<dyn Backend>, CliError> {
    let endpoint = match config.get::<String>(section, "endpoint")? {
        Some(endpoint) => endpoint,
        None => std::env::var(ENDPOINT_VAR)
            .map_err(|_| CliError::Validation(format!("live backend needs {ENDPOINT_VAR} or an endpoint config key")))?,
    };
    let http = HttpConfig {
        endpoint,
        api_key: std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty()),
        timeout: Duration::from_secs(config.get(section, "timeout_secs")?.unwrap_or(120)),
    };
    let mut policy = RetryPolicy::default();
    if let Some(attempts) = config.get::<u32>(section, "max_attempts")? {
        policy.max_attempts = attempts;
    }
    policy.validate().map_err(CliError::Validation)?;
    let per_minute = config.get::<usize>(section, "requests_per_minute")?;
    let limiter = RateLimiter::new(per_minute, Duration::from_secs(60), Some(concurrency.max(1)));
    let inner = HttpBackend::new(http).map_err(|e| CliError::Backend(e.to_string()))?;
    Ok(Box::new(PolicyBackend::new(
        inner,
        policy,
        Arc::new(limiter),
        Arc::new(SystemClock::default()),
    )))
}

pub fn build(
    choice: &BackendChoice,
    record: Option<&Path>,
    config: &Config,
    section: &str,
    concurrency: usize,
) -> Result<Box<dyn Backend>, CliError> {
    let backend: Box<dyn Backend> = match choice {
        BackendChoice::Live => live(config, section, concurrency)?,
        BackendChoice::Mock(path) => Box::new(MockBackend::from_script(
            MockScript::load(Path::new(path)).map_err(|e| CliError::Validation(e.to_string()))?,
        )),
        BackendChoice::Replay(path) => {
            Box::new(ReplayBackend::load(Path::new(path)).map_err(|e| CliError::Validation(e.to_string()))?)
        }
    };
    match record {
        Some(path) => Ok(Box::new(
            RecordingBackend::to_file(backend, path).map_err(|e| CliError::Io(e.to_string()))?,
        )),
        None => Ok(backend),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn choices() {
        assert_eq!(BackendChoice::parse("live").unwrap(), BackendChoice::Live);
        assert_eq!(BackendChoice::parse("mock:a.json").unwrap(), BackendChoice::Mock("a.json".into()));
        assert_eq!(BackendChoice::parse("replay:t.jsonl").unwrap(), BackendChoice::Replay("t.jsonl".into()));
        assert!(BackendChoice::parse("mock:").is_err());
        assert!(BackendChoice::parse("openai").is_err());
    }
}
