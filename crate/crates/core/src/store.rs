//! JSONL dataset files: a manifest header line followed by one instance per
//! line. Reference (human-authored) datasets can be imported through a key
//! map of dotted JSON paths.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::instance::{
    instance_id, Dataset, Decoding, Fields, GeneratedInstance, InstanceError, LabelCount, Manifest, Provenance,
    Status, StepState, TOOL_VERSION,
};
use crate::taskpacks::TaskPack;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("manifest announces {expected} instances, file has {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> StoreError + '_ {
    move |e| StoreError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    manifest: Manifest,
}

#[derive(Serialize, Deserialize)]
struct Body {
    id: String,
    task: String,
    inputs: Fields,
    /// Final label.
    label: String,
    original_label: String,
    status: Status,
    meta: Provenance,
}

/// Serializes a dataset to JSONL text.
pub fn to_jsonl(dataset: &Dataset) -> String {
    let mut out = serde_json::to_string(&Header {
        manifest: dataset.manifest().clone(),
    })
    .expect("manifest serializes");
    out.push('\n');
    for instance in dataset.instances() {
        let body = Body {
            id: instance.instance_id().to_string(),
            task: instance.task_id().to_string(),
            inputs: instance.inputs().clone(),
            label: instance.final_label().to_string(),
            original_label: instance.original_label().to_string(),
            status: instance.status(),
            meta: instance.provenance().clone(),
        };
        out.push_str(&serde_json::to_string(&body).expect("instance serializes"));
        out.push('\n');
    }
    out
}

/// Parses JSONL text written by [`to_jsonl`].
pub fn from_jsonl(text: &str) -> Result<Dataset, StoreError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(StoreError::SchemaViolation {
        line: 1,
        message: "empty file, expected a manifest line".into(),
    })?;
    let header: Header = serde_json::from_str(first).map_err(|e| StoreError::SchemaViolation {
        line: 1,
        message: format!("bad manifest: {e}"),
    })?;
    let manifest = header.manifest;
    let mut instances = Vec::new();
    for (index, line) in lines {
        let violation = |message: String| StoreError::SchemaViolation {
            line: index + 1,
            message,
        };
        let body: Body = serde_json::from_str(line).map_err(|e| violation(e.to_string()))?;
        let corrected = (body.status == Status::Relabeled).then_some(body.label.as_str());
        let instance = GeneratedInstance::restore(
            &body.task,
            &manifest.labels,
            &manifest.fields,
            body.id,
            body.inputs,
            &body.original_label,
            corrected,
            body.status,
            body.meta,
        )
        .map_err(|e| violation(e.to_string()))?;
        if instance.final_label() != manifest.labels.canonical(&body.label).unwrap_or_default() {
            return Err(violation(format!("label \"{}\" contradicts status", body.label)));
        }
        instances.push(instance);
    }
    if instances.len() != manifest.instance_count {
        return Err(StoreError::CountMismatch {
            expected: manifest.instance_count,
            found: instances.len(),
        });
    }
    Ok(Dataset::new(manifest.task_id.clone(), instances, manifest)?)
}

/// Writes atomically: a temporary file in the target directory is renamed
/// over `path`.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<(), StoreError> {
    write_atomic(path, to_jsonl(dataset).as_bytes())
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_error(dir))?;
    tmp.write_all(bytes).map_err(io_error(path))?;
    tmp.as_file().sync_all().map_err(io_error(path))?;
    tmp.persist(path).map_err(|e| io_error(path)(e.error))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, StoreError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    from_jsonl(&text)
}

/// How the records of a reference file map onto a task's fields.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyMap {
    /// Task field → dotted JSON path (`passage.text`, `choices.0`).
    pub fields: Vec<(String, String)>,
    /// Dotted path of the label.
    pub label: String,
    /// Label names indexed by integer label values, for files that store
    /// labels as 0, 1, ...
    #[serde(default)]
    pub label_values: Vec<String>,
}

impl KeyMap {
    /// Identity map: every task field and `label` read from top-level keys.
    pub fn identity(pack: &TaskPack) -> Self {
        Self {
            fields: pack.spec.field_schema.iter().map(|f| (f.clone(), f.clone())).collect(),
            label: "label".into(),
            label_values: Vec::new(),
        }
    }
}

/// Looks up a dotted path; numeric segments index arrays.
pub fn lookup_path<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(value, |current, segment| match current {
        Value::Object(map) => map.get(segment),
        Value::Array(items) => segment.parse::<usize>().ok().and_then(|i| items.get(i)),
        _ => None,
    })
}

/// Dotted paths of every scalar in a record, for error messages.
fn available(record: &Value) -> String {
    fn walk(value: &Value, prefix: &str, out: &mut Vec<String>) {
        let join = |key: &str| if prefix.is_empty() { key.to_string() } else { format!("{prefix}.{key}") };
        match value {
            Value::Object(map) => map.iter().for_each(|(k, v)| walk(v, &join(k), out)),
            Value::Array(items) => items.iter().enumerate().for_each(|(i, v)| walk(v, &join(&i.to_string()), out)),
            _ => out.push(prefix.to_string()),
        }
    }
    let mut paths = Vec::new();
    walk(record, "", &mut paths);
    format!("available keys: {}", paths.join(", "))
}

fn scalar_text(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Bool(b) => Some(if *b { "True" } else { "False" }.to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Imports a reference dataset. Native dataset files are read as is; other
/// JSONL files are mapped record by record with `map` (identity when
/// `None`).
pub fn import_reference(path: &Path, pack: &TaskPack, map: Option<&KeyMap>) -> Result<Dataset, StoreError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or_default();
    if serde_json::from_str::<Header>(first).is_ok() {
        return from_jsonl(&text);
    }
    let identity = KeyMap::identity(pack);
    let map = map.unwrap_or(&identity);
    let spec = &pack.spec;
    let mut instances = Vec::new();
    for (index, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let violation = |message: String| StoreError::SchemaViolation {
            line: index + 1,
            message,
        };
        let record: Value = serde_json::from_str(line).map_err(|e| violation(e.to_string()))?;
        let mut inputs = Fields::new();
        for field in &spec.field_schema {
            let path = map
                .fields
                .iter()
                .find(|(f, _)| f == field)
                .map_or(field.as_str(), |(_, p)| p.as_str());
            let value = lookup_path(&record, path)
                .and_then(scalar_text)
                .ok_or_else(|| violation(format!("no text at \"{path}\" for field {field}; {}", available(&record))))?;
            inputs.insert(field.clone(), value);
        }
        let raw = lookup_path(&record, &map.label)
            .ok_or_else(|| violation(format!("no label at \"{}\"; {}", map.label, available(&record))))?;
        let label = match raw.as_u64() {
            Some(i) if !map.label_values.is_empty() => map
                .label_values
                .get(i as usize)
                .cloned()
                .ok_or_else(|| violation(format!("label index {i} has no name")))?,
            _ => scalar_text(raw).ok_or_else(|| violation("label is not a scalar".into()))?,
        };
        let label = pack
            .normalize_label(&label)
            .ok_or_else(|| violation(format!("label \"{label}\" is not in the schema")))?;
        let provenance = Provenance {
            backend_id: "reference".into(),
            ..Provenance::default()
        };
        let id = instance_id(&spec.task_id, instances.len());
        instances.push(GeneratedInstance::new(spec, id, inputs, &label, provenance)?);
    }
    let targets: Vec<LabelCount> = spec
        .label_schema
        .labels()
        .iter()
        .map(|label| LabelCount {
            label: label.clone(),
            count: if spec.label_schema.is_open() {
                instances.len()
            } else {
                instances.iter().filter(|i| i.original_label() == label).count()
            },
        })
        .collect();
    let manifest = Manifest {
        run_id: "reference".into(),
        task_id: spec.task_id.clone(),
        task_hash: pack.content_hash(),
        backend_id: "reference".into(),
        decoding: Decoding::default(),
        labels: spec.label_schema.clone(),
        fields: spec.field_schema.clone(),
        targets,
        total: instances.len(),
        steps: StepState::default(),
        instance_count: instances.len(),
        tool_version: TOOL_VERSION.to_string(),
        created_at: 0,
        reproducible: true,
        confusion: None,
        run_state: None,
    };
    Ok(Dataset::new(spec.task_id.clone(), instances, manifest)?)
}
