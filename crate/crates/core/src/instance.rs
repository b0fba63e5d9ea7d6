//! Seeds, generated instances, datasets and run manifests.

use std::collections::{BTreeMap, HashSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{LabelSchema, TaskSpec};

/// Ordered map of field name → text.
pub type Fields = IndexMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstanceError {
    #[error("seed {0} has an empty payload")]
    EmptyPayload(String),
    #[error("seed {seed}: payload field \"{field}\" is blank")]
    BlankPayload { seed: String, field: String },
    #[error("label \"{label}\" is not in the label schema of task {task}")]
    UnknownLabel { task: String, label: String },
    #[error("instance {id}: inputs {found:?} do not match field schema {expected:?}")]
    FieldMismatch {
        id: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("instance {id}: status {status:?} inconsistent with corrected label {corrected:?}")]
    StatusMismatch {
        id: String,
        status: Status,
        corrected: Option<String>,
    },
    #[error("instance {id} belongs to task {found}, dataset is for {expected}")]
    TaskMismatch {
        id: String,
        expected: String,
        found: String,
    },
    #[error("duplicate instance id {0}")]
    DuplicateId(String),
    #[error("manifest targets sum to {sum} but total is {total}")]
    TargetMismatch { sum: usize, total: usize },
}

/// A task-specific grounding element produced by the seed step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSeed {
    seed_id: String,
    #[serde(default)]
    context_id: Option<String>,
    #[serde(default)]
    context: Option<String>,
    payload: Fields,
    /// Stage name → request hash of the prompts that produced this seed.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    prompt_hashes: BTreeMap<String, String>,
}

impl InstanceSeed {
    pub fn new(
        seed_id: impl Into<String>,
        context_id: Option<String>,
        context: Option<String>,
        payload: Fields,
    ) -> Result<Self, InstanceError> {
        let seed_id = seed_id.into();
        if payload.is_empty() {
            return Err(InstanceError::EmptyPayload(seed_id));
        }
        if let Some((field, _)) = payload.iter().find(|(_, text)| text.trim().is_empty()) {
            return Err(InstanceError::BlankPayload {
                seed: seed_id,
                field: field.clone(),
            });
        }
        Ok(Self {
            seed_id,
            context_id,
            context,
            payload,
            prompt_hashes: BTreeMap::new(),
        })
    }

    pub fn with_prompt_hash(mut self, stage: impl Into<String>, hash: impl Into<String>) -> Self {
        self.prompt_hashes.insert(stage.into(), hash.into());
        self
    }

    pub fn prompt_hashes(&self) -> &BTreeMap<String, String> {
        &self.prompt_hashes
    }

    pub fn seed_id(&self) -> &str {
        &self.seed_id
    }

    pub fn context_id(&self) -> Option<&str> {
        self.context_id.as_deref()
    }

    pub fn context(&self) -> Option<&str> {
        self.context.as_deref()
    }

    pub fn payload(&self) -> &Fields {
        &self.payload
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.payload.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Raw,
    Confirmed,
    Relabeled,
    Unverified,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default)]
    pub context_id: Option<String>,
    #[serde(default)]
    pub seed_id: Option<String>,
    #[serde(default)]
    pub variant: Option<String>,
    /// Stage name → request hash.
    #[serde(default)]
    pub prompt_hashes: BTreeMap<String, String>,
    pub backend_id: String,
    /// UTC seconds; zero in reproducible runs.
    pub created_at: u64,
    /// Unparsed trailing text of the generation (e.g. an explanation).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

/// One labeled instance with its provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedInstance {
    instance_id: String,
    task_id: String,
    inputs: Fields,
    original_label: String,
    corrected_label: Option<String>,
    status: Status,
    provenance: Provenance,
}

/// Canonical instance id for the `ordinal`-th generated instance.
pub fn instance_id(task_id: &str, ordinal: usize) -> String {
    format!("{task_id}-{ordinal:06}")
}

impl GeneratedInstance {
    /// Builds a raw instance, checking the label and the input fields
    /// against the task spec. Labels are stored in canonical casing.
    pub fn new(
        spec: &TaskSpec,
        instance_id: impl Into<String>,
        inputs: Fields,
        original_label: &str,
        provenance: Provenance,
    ) -> Result<Self, InstanceError> {
        Self::restore(
            &spec.task_id,
            &spec.label_schema,
            &spec.field_schema,
            instance_id.into(),
            inputs,
            original_label,
            None,
            Status::Raw,
            provenance,
        )
    }

    /// Rebuilds an instance in any status, validating every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn restore(
        task_id: &str,
        labels: &LabelSchema,
        fields: &[String],
        instance_id: String,
        inputs: Fields,
        original_label: &str,
        corrected_label: Option<&str>,
        status: Status,
        provenance: Provenance,
    ) -> Result<Self, InstanceError> {
        let canonical = |label: &str| {
            labels.canonical(label).ok_or_else(|| InstanceError::UnknownLabel {
                task: task_id.to_string(),
                label: label.to_string(),
            })
        };
        let original_label = canonical(original_label)?;
        let corrected_label = corrected_label.map(canonical).transpose()?;

        let found: Vec<String> = inputs.keys().cloned().collect();
        let expected_set: HashSet<&String> = fields.iter().collect();
        let found_set: HashSet<&String> = found.iter().collect();
        if expected_set != found_set || found.len() != fields.len() {
            return Err(InstanceError::FieldMismatch {
                id: instance_id,
                expected: fields.to_vec(),
                found,
            });
        }
        // Inputs are kept in field-schema order.
        let inputs: Fields = fields
            .iter()
            .map(|f| (f.clone(), inputs[f].clone()))
            .collect();

        let relabeled = corrected_label
            .as_ref()
            .is_some_and(|c| *c != original_label);
        let consistent = match status {
            Status::Relabeled => relabeled,
            Status::Raw | Status::Unverified => corrected_label.is_none(),
            Status::Confirmed => !relabeled,
        };
        if !consistent {
            return Err(InstanceError::StatusMismatch {
                id: instance_id,
                status,
                corrected: corrected_label,
            });
        }
        Ok(Self {
            instance_id,
            task_id: task_id.to_string(),
            inputs,
            original_label,
            corrected_label,
            status,
            provenance,
        })
    }

    pub fn instance_id(&self) -> &str {
        &self.instance_id
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn inputs(&self) -> &Fields {
        &self.inputs
    }

    pub fn original_label(&self) -> &str {
        &self.original_label
    }

    pub fn corrected_label(&self) -> Option<&str> {
        self.corrected_label.as_deref()
    }

    /// The label after self-correction, or the original one.
    pub fn final_label(&self) -> &str {
        self.corrected_label.as_deref().unwrap_or(&self.original_label)
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Concatenation of all input fields, in schema order.
    pub fn text(&self) -> String {
        self.inputs
            .values()
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Marks the current label as confirmed by the evaluator.
    pub fn confirmed(mut self) -> Self {
        if self.status != Status::Relabeled {
            self.status = Status::Confirmed;
        }
        self
    }

    /// Records the evaluator's label. Returning to the original label
    /// clears the correction.
    pub fn relabeled(mut self, schema: &LabelSchema, label: &str) -> Result<Self, InstanceError> {
        let canonical = schema.canonical(label).ok_or_else(|| InstanceError::UnknownLabel {
            task: self.task_id.clone(),
            label: label.to_string(),
        })?;
        if canonical == self.original_label {
            self.corrected_label = None;
            self.status = Status::Confirmed;
        } else {
            self.corrected_label = Some(canonical);
            self.status = Status::Relabeled;
        }
        Ok(self)
    }

    /// Flags an instance the evaluator could not judge; labels are kept.
    pub fn unverified(mut self) -> Self {
        if self.status == Status::Raw {
            self.status = Status::Unverified;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub model: String,
    pub generation_temperature: f64,
    pub correction_temperature: f64,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo".to_string(),
            generation_temperature: 1.0,
            correction_temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepState {
    pub contexts: bool,
    pub seeds: bool,
    pub instances: bool,
    pub correction: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCount {
    pub label: String,
    pub count: usize,
}

/// Run metadata written as the header line of every dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub task_id: String,
    pub task_hash: String,
    pub backend_id: String,
    pub decoding: Decoding,
    pub labels: LabelSchema,
    pub fields: Vec<String>,
    pub targets: Vec<LabelCount>,
    pub total: usize,
    pub steps: StepState,
    pub instance_count: usize,
    pub tool_version: String,
    pub created_at: u64,
    /// Timestamps are pinned to zero so repeated runs are byte-identical.
    pub reproducible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<crate::selfcorrect::ConfusionMatrix>,
    /// Resumable pipeline state; present in checkpoints only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_state: Option<crate::pipeline::RunState>,
}

impl Manifest {
    pub fn check(&self) -> Result<(), InstanceError> {
        let sum: usize = self.targets.iter().map(|t| t.count).sum();
        if sum != self.total {
            return Err(InstanceError::TargetMismatch {
                sum,
                total: self.total,
            });
        }
        Ok(())
    }
}

pub const TOOL_VERSION: &str = concat!("targen ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    task_id: String,
    instances: Vec<GeneratedInstance>,
    manifest: Manifest,
}

impl Dataset {
    pub fn new(
        task_id: impl Into<String>,
        instances: Vec<GeneratedInstance>,
        mut manifest: Manifest,
    ) -> Result<Self, InstanceError> {
        let task_id = task_id.into();
        let mut ids = HashSet::new();
        for instance in &instances {
            if instance.task_id != task_id {
                return Err(InstanceError::TaskMismatch {
                    id: instance.instance_id.clone(),
                    expected: task_id,
                    found: instance.task_id.clone(),
                });
            }
            if !ids.insert(instance.instance_id.as_str()) {
                return Err(InstanceError::DuplicateId(instance.instance_id.clone()));
            }
        }
        manifest.check()?;
        manifest.instance_count = instances.len();
        Ok(Self {
            task_id,
            instances,
            manifest,
        })
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn instances(&self) -> &[GeneratedInstance] {
        &self.instances
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn into_parts(self) -> (Vec<GeneratedInstance>, Manifest) {
        (self.instances, self.manifest)
    }

    pub fn texts(&self) -> Vec<String> {
        self.instances.iter().map(GeneratedInstance::text).collect()
    }

    /// Texts of the selected fields only (all fields when `fields` is empty).
    pub fn texts_of(&self, fields: &[String]) -> Vec<String> {
        if fields.is_empty() {
            return self.texts();
        }
        self.instances
            .iter()
            .map(|instance| {
                fields
                    .iter()
                    .filter_map(|f| instance.inputs.get(f))
                    .map(String::as_str)
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }
}
