//! Live client against a local stub server, plus record/replay round trips.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use targen_core::backend::{
    request_hash, Backend, BackendError, ChatRequest, ChatTranscript, HttpBackend, HttpConfig, MockBackend,
    PolicyBackend, RateLimiter, RecordingBackend, ReplayBackend, RetryPolicy, VirtualClock,
};

struct Received {
    authorization: Option<String>,
    body: serde_json::Value,
}

/// Serves one canned `(status, body)` per connection, in order.
fn stub_server(replies: Vec<(u16, String)>) -> (String, JoinHandle<Vec<Received>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut received = Vec::new();
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((name, value)) = line.split_once(':') {
                    match name.to_ascii_lowercase().as_str() {
                        "content-length" => length = value.trim().parse().unwrap(),
                        "authorization" => authorization = Some(value.trim().to_string()),
                        _ => {}
                    }
                }
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            received.push(Received {
                authorization,
                body: serde_json::from_slice(&raw).unwrap(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        received
    });
    (url, handle)
}

fn completion(content: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 4, "completion_tokens": 2}
    })
    .to_string()
}

fn client(endpoint: String, key: Option<&str>) -> HttpBackend {
    HttpBackend::new(HttpConfig {
        endpoint,
        api_key: key.map(String::from),
        timeout: Duration::from_secs(10),
    })
    .unwrap()
}

fn request() -> ChatRequest {
    ChatRequest::user("Generate 3 topics.", "gpt-3.5-turbo", 1.0, 64)
}

#[test]
fn sends_chat_completion_body_and_bearer_key() {
    let (url, server) = stub_server(vec![(200, completion("1. Farming"))]);
    let response = client(url, Some("sk-test")).complete(&request()).unwrap();
    assert_eq!(response.content, "1. Farming");
    let received = server.join().unwrap();
    assert_eq!(received[0].authorization.as_deref(), Some("Bearer sk-test"));
    assert_eq!(received[0].body["model"], "gpt-3.5-turbo");
    assert_eq!(received[0].body["messages"][0]["content"], "Generate 3 topics.");
    assert_eq!(received[0].body["max_tokens"], 64);
}

#[test]
fn statuses_map_to_error_kinds() {
    let cases = [
        (429, "RateLimited"),
        (408, "Timeout"),
        (401, "Unauthorized"),
        (403, "Unauthorized"),
        (500, "ServerError"),
        (503, "ServerError"),
        (400, "Rejected"),
    ];
    let (url, server) = stub_server(cases.iter().map(|(s, _)| (*s, "{}".to_string())).collect());
    let backend = client(url, None);
    for (status, kind) in cases {
        let error = backend.complete(&request()).unwrap_err();
        let got = match error {
            BackendError::RateLimited(_) => "RateLimited",
            BackendError::Timeout(_) => "Timeout",
            BackendError::Unauthorized { .. } => "Unauthorized",
            BackendError::ServerError { .. } => "ServerError",
            BackendError::Rejected { .. } => "Rejected",
            other => panic!("{status}: {other}"),
        };
        assert_eq!(got, kind, "status {status}");
    }
    assert!(server.join().unwrap().iter().all(|r| r.authorization.is_none()));
}

#[test]
fn rate_limit_then_success_is_retried() {
    let (url, server) = stub_server(vec![
        (429, "{}".into()),
        (503, "{}".into()),
        (200, completion("ok")),
    ]);
    let clock = Arc::new(VirtualClock::new());
    let backend = PolicyBackend::new(
        client(url, None),
        RetryPolicy::default(),
        Arc::new(RateLimiter::unlimited()),
        clock.clone(),
    );
    assert_eq!(backend.complete(&request()).unwrap().content, "ok");
    assert_eq!(server.join().unwrap().len(), 3);
    assert_eq!(clock.sleeps(), vec![Duration::from_millis(500), Duration::from_millis(1000)]);
}

#[test]
fn unauthorized_is_not_retried() {
    let (url, server) = stub_server(vec![(401, "bad key".into())]);
    let backend = PolicyBackend::new(
        client(url, Some("wrong")),
        RetryPolicy::default(),
        Arc::new(RateLimiter::unlimited()),
        Arc::new(VirtualClock::new()),
    );
    let error = backend.complete(&request()).unwrap_err();
    assert!(matches!(error, BackendError::Unauthorized { status: 401, .. }), "{error}");
    assert_eq!(server.join().unwrap().len(), 1);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let error = client(format!("http://127.0.0.1:{port}/"), None).complete(&request()).unwrap_err();
    assert!(matches!(error, BackendError::Transport(_)), "{error}");
}

#[test]
fn recorded_transcript_replays_in_order_per_request() {
    let same = request();
    let other = ChatRequest::user("Generate 5 words.", "gpt-3.5-turbo", 1.0, 64);
    let recorder = RecordingBackend::new(MockBackend::queue(["first", "second", "words"]));
    recorder.complete(&same).unwrap();
    recorder.complete(&same).unwrap();
    recorder.complete(&other).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    recorder.transcript().save(&path).unwrap();

    let replay = ReplayBackend::load(&path).unwrap();
    assert_eq!(replay.complete(&other).unwrap().content, "words");
    assert_eq!(replay.complete(&same).unwrap().content, "first");
    assert_eq!(replay.complete(&same).unwrap().content, "second");
    match replay.complete(&same).unwrap_err() {
        BackendError::ReplayMiss { hash } => assert_eq!(hash, request_hash(&same)),
        other => panic!("{other}"),
    }
    assert_eq!(ChatTranscript::load(&path).unwrap().len(), 3);
}

#[test]
fn request_hash_covers_model_temperature_and_messages() {
    let base = request();
    let mut warmer = base.clone();
    warmer.temperature = 0.5;
    let mut other_model = base.clone();
    other_model.model = "gpt-4".into();
    let mut longer = base.clone();
    longer.max_tokens = 65;
    assert_ne!(request_hash(&base), request_hash(&warmer));
    assert_ne!(request_hash(&base), request_hash(&other_model));
    assert_eq!(request_hash(&base), request_hash(&longer));
    assert_eq!(request_hash(&base).len(), 64);
}

#[test]
fn function_mocks_see_each_request() {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let backend = MockBackend::from_fn(move |i, req| {
        log.lock().unwrap().push(req.prompt().to_string());
        Ok(targen_core::backend::ChatResponse::stop(format!("{i}")))
    });
    assert_eq!(backend.complete(&request()).unwrap().content, "0");
    assert_eq!(backend.complete(&request()).unwrap().content, "1");
    assert_eq!(seen.lock().unwrap().len(), 2);
}
