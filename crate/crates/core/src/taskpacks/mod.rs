//! Built-in task packs and the hooks they reference.
//!
//! A pack is a [`TaskSpec`] plus the deterministic code it needs: a
//! structural instance validator, seed processors and post-processors. The
//! nine built-in packs are embedded TOML spec files; user packs use the same
//! format and can name any of the built-in hooks.

mod processors;
mod validate;

use std::path::Path;

use thiserror::Error;

use crate::schema::{validate_task_spec, TaskSpec, ValidationIssue};
use crate::specfile::{parse_spec_file, to_spec_file, SpecDocument, SpecFileError};

pub use processors::{
    affix_query, answer_letters, choose_pronouns, looks_plural, parse_options, resolve_annotations,
    split_pair, Annotation, PostContext, PostProcessor, SeedProcessor,
};
pub use validate::{contains_keyword, validate_fields, validate_instance, Validator};

/// Ids of the built-in packs.
pub const BUILTIN_TASKS: [&str; 9] = ["cb", "copa", "rte", "wic", "wsc", "boolq", "record", "axg", "multirc"];

const ASSETS: [(&str, &str); 9] = [
    ("cb", include_str!("../../assets/tasks/cb.toml")),
    ("copa", include_str!("../../assets/tasks/copa.toml")),
    ("rte", include_str!("../../assets/tasks/rte.toml")),
    ("wic", include_str!("../../assets/tasks/wic.toml")),
    ("wsc", include_str!("../../assets/tasks/wsc.toml")),
    ("boolq", include_str!("../../assets/tasks/boolq.toml")),
    ("record", include_str!("../../assets/tasks/record.toml")),
    ("axg", include_str!("../../assets/tasks/axg.toml")),
    ("multirc", include_str!("../../assets/tasks/multirc.toml")),
];

#[derive(Debug, Error)]
pub enum TaskPackError {
    #[error("unknown task \"{0}\" (built-in tasks: cb, copa, rte, wic, wsc, boolq, record, axg, multirc)")]
    UnknownTask(String),
    #[error("unknown {kind} \"{name}\"")]
    UnknownHook { kind: &'static str, name: String },
    #[error(transparent)]
    SpecFile(#[from] SpecFileError),
    #[error("invalid task spec: {}", join_issues(.0))]
    Invalid(Vec<ValidationIssue>),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskPack {
    pub spec: TaskSpec,
    pub validator: Validator,
    pub post_processors: Vec<PostProcessor>,
    pub seed_processors: Vec<SeedProcessor>,
}

impl TaskPack {
    /// A pack with no hooks beyond the generic validator.
    pub fn plain(spec: TaskSpec) -> Result<Self, TaskPackError> {
        Self::from_document(SpecDocument::new(spec))
    }

    /// Resolves hook names and validates the spec.
    pub fn from_document(doc: SpecDocument) -> Result<Self, TaskPackError> {
        let validator = match doc.validator.as_deref() {
            None => Validator::Generic,
            Some(name) => Validator::from_name(name).ok_or_else(|| TaskPackError::UnknownHook {
                kind: "validator",
                name: name.to_string(),
            })?,
        };
        let post_processors = doc
            .post_processors
            .iter()
            .map(|name| {
                PostProcessor::from_name(name).ok_or_else(|| TaskPackError::UnknownHook {
                    kind: "post-processor",
                    name: name.clone(),
                })
            })
            .collect::<Result<_, _>>()?;
        let seed_processors = doc
            .seed_processors
            .iter()
            .map(|name| {
                SeedProcessor::from_name(name).ok_or_else(|| TaskPackError::UnknownHook {
                    kind: "seed processor",
                    name: name.clone(),
                })
            })
            .collect::<Result<_, _>>()?;
        let issues = validate_task_spec(&doc.spec);
        if !issues.is_empty() {
            return Err(TaskPackError::Invalid(issues));
        }
        Ok(Self {
            spec: doc.spec,
            validator,
            post_processors,
            seed_processors,
        })
    }

    pub fn parse(text: &str) -> Result<Self, TaskPackError> {
        Self::from_document(parse_spec_file(text)?)
    }

    pub fn to_document(&self) -> SpecDocument {
        SpecDocument {
            spec: self.spec.clone(),
            validator: (self.validator != Validator::Generic).then(|| self.validator.name().to_string()),
            post_processors: self.post_processors.iter().map(|p| p.name().to_string()).collect(),
            seed_processors: self.seed_processors.iter().map(|p| p.name().to_string()).collect(),
        }
    }

    /// The pack as a spec file that [`TaskPack::parse`] reads back.
    pub fn to_spec_file(&self) -> String {
        to_spec_file(&self.to_document())
    }

    /// SHA-256 of the canonical spec file.
    pub fn content_hash(&self) -> String {
        crate::specfile::content_hash(&self.to_document())
    }

    /// Canonical form of a label produced by the model, or `None` when it is
    /// not admissible. Open answers lose a leading "[X]:" and wrapping quotes;
    /// option-letter answers are normalized to "A, C".
    pub fn normalize_label(&self, label: &str) -> Option<String> {
        if self.post_processors.contains(&PostProcessor::MultircAnswers) {
            let letters = answer_letters(label);
            return (!letters.is_empty()).then_some(letters);
        }
        if self.spec.label_schema.is_open() {
            let mut text = label.trim();
            if let Some(rest) = text.strip_prefix("[X]") {
                text = rest.trim_start_matches([':', '=', ' ']);
            }
            let text = text
                .trim_end_matches('.')
                .trim_matches(|c: char| c == '"' || c == '\'' || c == '“' || c == '”')
                .trim_end_matches('.')
                .trim();
            return self.spec.label_schema.canonical(text);
        }
        self.spec.label_schema.canonical(label)
    }
}

/// The built-in pack with the given id.
pub fn builtin_task(task_id: &str) -> Result<TaskPack, TaskPackError> {
    let wanted = task_id.trim().to_lowercase();
    let (_, text) = ASSETS
        .iter()
        .find(|(id, _)| *id == wanted)
        .ok_or_else(|| TaskPackError::UnknownTask(task_id.to_string()))?;
    TaskPack::parse(text)
}

/// A built-in id or a path to a spec file.
pub fn load_task(id_or_path: &str) -> Result<TaskPack, TaskPackError> {
    if BUILTIN_TASKS.contains(&id_or_path.trim().to_lowercase().as_str()) {
        return builtin_task(id_or_path);
    }
    let path = Path::new(id_or_path);
    if !path.exists() {
        return Err(TaskPackError::UnknownTask(id_or_path.to_string()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| TaskPackError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    TaskPack::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::StageRole;

    #[test]
    fn every_builtin_spec_is_valid() {
        for id in BUILTIN_TASKS {
            let pack = builtin_task(id).unwrap_or_else(|e| panic!("{id}: {e}"));
            assert_eq!(pack.spec.task_id, id);
            assert!(validate_task_spec(&pack.spec).is_empty());
        }
    }

    #[test]
    fn label_and_field_schemas() {
        assert_eq!(builtin_task("cb").unwrap().spec.label_schema.labels(), ["entailment", "contradiction", "neutral"]);
        assert_eq!(builtin_task("wic").unwrap().spec.field_schema, ["word", "sentence1", "sentence2"]);
        assert_eq!(builtin_task("copa").unwrap().spec.label_schema.labels(), ["Choice 1", "Choice 2"]);
        assert!(builtin_task("record").unwrap().spec.label_schema.is_open());
        assert_eq!(builtin_task("multirc").unwrap().spec.fixed_contexts.len(), 15);
        assert!(builtin_task("wic").unwrap().spec.stage(StageRole::Contexts).is_none());
        assert!(builtin_task("cb").unwrap().spec.stage(StageRole::Seeds).is_none());
        assert!(matches!(builtin_task("squad"), Err(TaskPackError::UnknownTask(_))));
        assert!(builtin_task(" RTE ").is_ok());
    }

    #[test]
    fn export_round_trips() {
        for id in BUILTIN_TASKS {
            let pack = builtin_task(id).unwrap();
            let back = TaskPack::parse(&pack.to_spec_file()).unwrap();
            assert_eq!(back, pack, "{id}");
            assert_eq!(back.content_hash(), pack.content_hash());
        }
    }

    #[test]
    fn unknown_hooks_are_rejected() {
        let text = builtin_task("rte").unwrap().to_spec_file().replace("premise_hypothesis", "nope");
        assert!(matches!(TaskPack::parse(&text), Err(TaskPackError::UnknownHook { .. })));
    }

    #[test]
    fn label_normalization() {
        let record = builtin_task("record").unwrap();
        assert_eq!(record.normalize_label("[X]: German").as_deref(), Some("German"));
        assert_eq!(record.normalize_label("\"German\".").as_deref(), Some("German"));
        let multirc = builtin_task("multirc").unwrap();
        assert_eq!(multirc.normalize_label("D, A").as_deref(), Some("A, D"));
        assert_eq!(multirc.normalize_label("nothing"), None);
        let rte = builtin_task("rte").unwrap();
        assert_eq!(rte.normalize_label(" Not Entailment ").as_deref(), Some("not entailment"));
        assert_eq!(rte.normalize_label("maybe"), None);
    }
}
