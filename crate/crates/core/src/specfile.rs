//! Task spec files: TOML documents with `[task]`, `[labels]`, `[stage.N]`
//! and `[correction]` sections.
//!
//! ```toml
//! [task]
//! id = "rte"
//! description = "..."
//! fields = ["premise", "hypothesis"]
//! balance = "balanced"          # "alternating", or a table of label = count
//!
//! [labels]
//! values = ["entailment", "not entailment"]   # or: open = "entity"
//!
//! [stage.1]
//! role = "seeds"
//! template = "For the given domain {DOMAIN}, generate {N} ..."
//! count = 10
//! item_field = "sentence"
//! parser = { kind = "numbered_list" }
//!
//! [correction]
//! instructions = "..."
//! max_retries = 1
//! [[correction.exemplar]]
//! input = "..."
//! actual = "entailment"
//! predicted = "entailment"
//! verdict = "CORRECT"
//! ```
//!
//! Stage keys are ordered numerically. The content hash of a spec is the
//! SHA-256 of its canonical re-serialization, so formatting and comments do
//! not affect it.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::schema::{
    BalancePolicy, CorrectionExemplar, CorrectionSpec, LabelSchema, ParseRule, PromptStage,
    SeedExpansion, StageRole, TaskSpec,
};

#[derive(Debug, Error)]
pub enum SpecFileError {
    #[error("spec file is not valid TOML: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("spec file: {0}")]
    Invalid(String),
}

/// A task spec plus the names of the pack hooks it asks for.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecDocument {
    pub spec: TaskSpec,
    pub validator: Option<String>,
    pub post_processors: Vec<String>,
    pub seed_processors: Vec<String>,
}

impl SpecDocument {
    pub fn new(spec: TaskSpec) -> Self {
        Self {
            spec,
            validator: None,
            post_processors: Vec::new(),
            seed_processors: Vec::new(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDoc {
    task: TaskSection,
    labels: LabelsSection,
    #[serde(default)]
    stage: IndexMap<String, StageSection>,
    correction: CorrectionSection,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskSection {
    id: String,
    #[serde(default)]
    description: String,
    fields: Vec<String>,
    #[serde(default = "default_balance")]
    balance: BalanceEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variant_field: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    fixed_contexts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    validator: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    seed_processors: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    post_processors: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BalanceEntry {
    Named(String),
    Explicit(IndexMap<String, usize>),
}

fn default_balance() -> BalanceEntry {
    BalanceEntry::Named("balanced".to_string())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    open: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageSection {
    role: StageRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variant: Option<String>,
    #[serde(default = "one")]
    count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    item_field: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_source: Option<String>,
    template: String,
    parser: ParseRule,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    fields: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expand: Option<SeedExpansion>,
}

fn one() -> usize {
    1
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorrectionSection {
    instructions: String,
    #[serde(default = "one")]
    max_retries: usize,
    #[serde(default)]
    exemplar: Vec<CorrectionExemplar>,
}

/// Parses a spec file. Structural validation is left to
/// [`validate_task_spec`](crate::schema::validate_task_spec).
pub fn parse_spec_file(text: &str) -> Result<SpecDocument, SpecFileError> {
    let doc: FileDoc = toml::from_str(text)?;
    let labels = match (doc.labels.values, doc.labels.open) {
        (Some(values), None) => LabelSchema::closed(values),
        (None, Some(tag)) => LabelSchema::open(tag),
        _ => Err("[labels] needs exactly one of `values` or `open`".to_string()),
    }
    .map_err(SpecFileError::Invalid)?;

    let balance_policy = match doc.task.balance {
        BalanceEntry::Named(name) => match name.as_str() {
            "balanced" => BalancePolicy::Balanced,
            "alternating" => BalancePolicy::Alternating,
            other => return Err(SpecFileError::Invalid(format!("unknown balance policy \"{other}\""))),
        },
        BalanceEntry::Explicit(counts) => BalancePolicy::Explicit(counts.into_iter().collect()),
    };

    let mut numbered = Vec::with_capacity(doc.stage.len());
    for (key, section) in doc.stage {
        let index: usize = key
            .parse()
            .map_err(|_| SpecFileError::Invalid(format!("stage key \"{key}\" is not a number")))?;
        numbered.push((index, section));
    }
    numbered.sort_by_key(|(index, _)| *index);
    if let Some(pair) = numbered.windows(2).find(|pair| pair[0].0 == pair[1].0) {
        return Err(SpecFileError::Invalid(format!("stage {} declared twice", pair[0].0)));
    }
    let stages = numbered
        .into_iter()
        .map(|(_, s)| PromptStage {
            role: s.role,
            label: s.label,
            variant: s.variant,
            template: s.template,
            parser: s.parser,
            count: s.count,
            item_field: s.item_field,
            outputs: s.outputs,
            expand: s.expand,
            fields: s.fields.into_iter().collect(),
            label_source: s.label_source,
        })
        .collect();

    Ok(SpecDocument {
        spec: TaskSpec {
            task_id: doc.task.id,
            description: doc.task.description,
            label_schema: labels,
            field_schema: doc.task.fields,
            stages,
            balance_policy,
            correction: CorrectionSpec {
                instructions: doc.correction.instructions,
                exemplars: doc.correction.exemplar,
                max_retries: doc.correction.max_retries,
            },
            variant_field: doc.task.variant_field,
            fixed_contexts: doc.task.fixed_contexts,
        },
        validator: doc.task.validator,
        post_processors: doc.task.post_processors,
        seed_processors: doc.task.seed_processors,
    })
}

/// Canonical TOML text of a spec document.
pub fn to_spec_file(doc: &SpecDocument) -> String {
    let spec = &doc.spec;
    let labels = if spec.label_schema.is_open() {
        LabelsSection {
            values: None,
            open: spec.label_schema.labels().first().cloned(),
        }
    } else {
        LabelsSection {
            values: Some(spec.label_schema.labels().to_vec()),
            open: None,
        }
    };
    let balance = match &spec.balance_policy {
        BalancePolicy::Balanced => BalanceEntry::Named("balanced".into()),
        BalancePolicy::Alternating => BalanceEntry::Named("alternating".into()),
        BalancePolicy::Explicit(counts) => BalanceEntry::Explicit(counts.iter().cloned().collect()),
    };
    let stage = spec
        .stages
        .iter()
        .enumerate()
        .map(|(index, s)| {
            (
                (index + 1).to_string(),
                StageSection {
                    role: s.role,
                    label: s.label.clone(),
                    variant: s.variant.clone(),
                    count: s.count,
                    item_field: s.item_field.clone(),
                    outputs: s.outputs.clone(),
                    label_source: s.label_source.clone(),
                    template: s.template.clone(),
                    parser: s.parser.clone(),
                    fields: s.fields.iter().cloned().collect(),
                    expand: s.expand.clone(),
                },
            )
        })
        .collect();
    let file = FileDoc {
        task: TaskSection {
            id: spec.task_id.clone(),
            description: spec.description.clone(),
            fields: spec.field_schema.clone(),
            balance,
            variant_field: spec.variant_field.clone(),
            fixed_contexts: spec.fixed_contexts.clone(),
            validator: doc.validator.clone(),
            seed_processors: doc.seed_processors.clone(),
            post_processors: doc.post_processors.clone(),
        },
        labels,
        stage,
        correction: CorrectionSection {
            instructions: spec.correction.instructions.clone(),
            max_retries: spec.correction.max_retries,
            exemplar: spec.correction.exemplars.clone(),
        },
    };
    toml::to_string_pretty(&file).expect("spec document serializes")
}

/// Lowercase hex SHA-256 of the canonical spec file.
pub fn content_hash(doc: &SpecDocument) -> String {
    hex::encode(Sha256::digest(to_spec_file(doc).as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
# a comment
[task]
id = "toy"
description = "toy entailment"
fields = ["premise", "hypothesis"]
balance = { yes = 3, no = 1 }

[labels]
values = ["yes", "no"]

[stage.10]
role = "instances"
template = "Premise: {SENTENCE}\nLabel: {LABEL}"
parser = { kind = "fielded_record", labels = ["Hypothesis"], implicit_first = true }
fields = { premise = "seed.sentence", hypothesis = "record.Hypothesis" }

[stage.2]
role = "seeds"
template = "Write {N} sentences."
count = 5
item_field = "sentence"
parser = { kind = "numbered_list" }

[correction]
instructions = "Say yes or no."

[[correction.exemplar]]
input = "a"
actual = "yes"
predicted = "yes"
verdict = "CORRECT"

[[correction.exemplar]]
input = "b"
actual = "no"
predicted = "yes"
verdict = "INCORRECT"
explanation = "because"
"#;

    #[test]
    fn parses_and_orders_stages_numerically() {
        let doc = parse_spec_file(SAMPLE).unwrap();
        let spec = &doc.spec;
        assert_eq!(spec.stages[0].role, StageRole::Seeds);
        assert_eq!(spec.stages[1].role, StageRole::Instances);
        assert_eq!(spec.stages[0].count, 5);
        assert_eq!(
            spec.balance_policy,
            BalancePolicy::Explicit(vec![("yes".into(), 3), ("no".into(), 1)])
        );
        assert_eq!(spec.correction.max_retries, 1);
        assert!(crate::schema::validate_task_spec(spec).is_empty());
    }

    #[test]
    fn canonical_round_trip_and_hash() {
        let doc = parse_spec_file(SAMPLE).unwrap();
        let text = to_spec_file(&doc);
        let again = parse_spec_file(&text).unwrap();
        assert_eq!(again, doc);
        assert_eq!(to_spec_file(&again), text);
        assert_eq!(content_hash(&doc), content_hash(&again));
        let mut changed = doc.clone();
        changed.spec.description.push('!');
        assert_ne!(content_hash(&doc), content_hash(&changed));
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(matches!(parse_spec_file("[task"), Err(SpecFileError::Syntax(_))));
        let bad_key = SAMPLE.replace("[stage.2]", "[stage.two]");
        assert!(matches!(parse_spec_file(&bad_key), Err(SpecFileError::Invalid(_))));
        let unknown = SAMPLE.replace("balance = {", "colour = \"red\"\nbalance = {");
        assert!(parse_spec_file(&unknown).is_err());
        let both = SAMPLE.replace("values = [\"yes\", \"no\"]", "values = [\"yes\", \"no\"]\nopen = \"x\"");
        assert!(matches!(parse_spec_file(&both), Err(SpecFileError::Invalid(_))));
    }
}
