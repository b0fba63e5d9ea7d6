//! Record and replay of backend exchanges as JSON-lines transcripts.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{request_hash, Backend, BackendError, ChatRequest, ChatResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub hash: String,
    pub request: ChatRequest,
    pub response: ChatResponse,
}

/// Append-only list of exchanges, in call order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChatTranscript {
    entries: Vec<TranscriptEntry>,
}

impl ChatTranscript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, request: ChatRequest, response: ChatResponse) -> &TranscriptEntry {
        self.entries.push(TranscriptEntry {
            hash: request_hash(&request),
            request,
            response,
        });
        self.entries.last().expect("just pushed")
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let file = File::open(path).map_err(|e| BackendError::Transcript(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (index, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| BackendError::Transcript(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line).map_err(|e| {
                BackendError::Transcript(format!("{} line {}: {e}", path.display(), index + 1))
            })?;
            let expected = request_hash(&entry.request);
            if entry.hash != expected {
                return Err(BackendError::Transcript(format!(
                    "{} line {}: hash {} does not match request (expected {expected})",
                    path.display(),
                    index + 1,
                    entry.hash
                )));
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), BackendError> {
        let io = |e: std::io::Error| BackendError::Transcript(format!("{}: {e}", path.display()));
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        for entry in &self.entries {
            writeln!(out, "{}", entry_line(entry)).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

fn entry_line(entry: &TranscriptEntry) -> String {
    serde_json::to_string(entry).expect("transcript entry serializes")
}

/// Passes requests through to `inner` and appends every successful exchange
/// to a transcript, optionally streaming it to a file as it grows.
pub struct RecordingBackend<B> {
    inner: B,
    transcript: Mutex<ChatTranscript>,
    sink: Option<Mutex<BufWriter<File>>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            transcript: Mutex::new(ChatTranscript::new()),
            sink: None,
        }
    }

    /// Records to `path`, appending to an existing transcript file.
    pub fn to_file(inner: B, path: &Path) -> Result<Self, BackendError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BackendError::Transcript(format!("{}: {e}", path.display())))?;
        Ok(Self {
            inner,
            transcript: Mutex::new(ChatTranscript::new()),
            sink: Some(Mutex::new(BufWriter::new(file))),
        })
    }

    pub fn transcript(&self) -> ChatTranscript {
        self.transcript.lock().expect("transcript lock").clone()
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let response = self.inner.complete(request)?;
        let mut transcript = self.transcript.lock().expect("transcript lock");
        let entry = transcript.push(request.clone(), response.clone());
        if let Some(sink) = &self.sink {
            let mut sink = sink.lock().expect("sink lock");
            writeln!(sink, "{}", entry_line(entry))
                .and_then(|_| sink.flush())
                .map_err(|e| BackendError::Transcript(e.to_string()))?;
        }
        Ok(response)
    }
}

/// Answers from a transcript by exact request hash. Repeated identical
/// requests receive the recorded responses in their original order.
pub struct ReplayBackend {
    responses: HashMap<String, Vec<ChatResponse>>,
    cursors: Mutex<HashMap<String, usize>>,
}

impl ReplayBackend {
    pub fn new(transcript: &ChatTranscript) -> Self {
        let mut responses: HashMap<String, Vec<ChatResponse>> = HashMap::new();
        for entry in transcript.entries() {
            responses
                .entry(entry.hash.clone())
                .or_default()
                .push(entry.response.clone());
        }
        Self {
            responses,
            cursors: Mutex::new(HashMap::new()),
        }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        Ok(Self::new(&ChatTranscript::load(path)?))
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> String {
        "replay".to_string()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let hash = request_hash(request);
        let recorded = self
            .responses
            .get(&hash)
            .ok_or_else(|| BackendError::ReplayMiss { hash: hash.clone() })?;
        let mut cursors = self.cursors.lock().expect("replay lock");
        let cursor = cursors.entry(hash.clone()).or_insert(0);
        let response = recorded
            .get(*cursor)
            .cloned()
            .ok_or(BackendError::ReplayMiss { hash })?;
        *cursor += 1;
        Ok(response)
    }
}
