//! Task specification types and their validation.
//!
//! A [`TaskSpec`] describes one generation task end to end: the label space,
//! the instance fields, the prompt stages for each pipeline step and the
//! self-correction instructions. Specs are plain values; [`validate_task_spec`]
//! reports every structural problem as data instead of failing fast.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Ordered label space of a task.
///
/// Closed schemas list every admissible label (at least two). Open schemas
/// carry a single tag naming the kind of free-form answer (for example an
/// entity mention) and accept any nonempty label text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    labels: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    open: bool,
}

impl LabelSchema {
    /// Builds a closed schema, rejecting fewer than two labels, empty labels
    /// and duplicates (compared case-insensitively after trimming).
    pub fn closed<I, S>(labels: I) -> Result<Self, String>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let schema = Self {
            labels: labels.into_iter().map(Into::into).collect(),
            open: false,
        };
        match schema.issues().into_iter().next() {
            Some(issue) => Err(issue),
            None => Ok(schema),
        }
    }

    /// Builds an open schema whose answers are free text described by `tag`.
    pub fn open(tag: impl Into<String>) -> Result<Self, String> {
        let schema = Self {
            labels: vec![tag.into()],
            open: true,
        };
        match schema.issues().into_iter().next() {
            Some(issue) => Err(issue),
            None => Ok(schema),
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Returns the canonical (declared) spelling of `candidate`, comparing
    /// case-insensitively after trimming. Open schemas accept any nonempty
    /// text and return it trimmed.
    pub fn canonical(&self, candidate: &str) -> Option<String> {
        let trimmed = candidate.trim();
        if self.open {
            return (!trimmed.is_empty()).then(|| trimmed.to_string());
        }
        let folded = trimmed.to_lowercase();
        self.labels
            .iter()
            .find(|label| label.trim().to_lowercase() == folded)
            .cloned()
    }

    pub fn contains(&self, candidate: &str) -> bool {
        self.canonical(candidate).is_some()
    }

    /// Position of a label in schema order.
    pub fn index_of(&self, candidate: &str) -> Option<usize> {
        let canonical = self.canonical(candidate)?;
        self.labels.iter().position(|label| *label == canonical)
    }

    pub(crate) fn issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.open {
            if self.labels.len() != 1 {
                issues.push("open label schema must declare exactly one tag".to_string());
            }
        } else if self.labels.len() < 2 {
            issues.push(format!(
                "label schema needs at least two labels, found {}",
                self.labels.len()
            ));
        }
        let mut seen = HashSet::new();
        for label in &self.labels {
            let folded = label.trim().to_lowercase();
            if folded.is_empty() {
                issues.push("label schema contains an empty label".to_string());
            } else if !seen.insert(folded) {
                issues.push(format!("duplicate label \"{}\"", label.trim()));
            }
        }
        issues
    }
}

/// Which pipeline step a prompt stage belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageRole {
    Contexts,
    Seeds,
    Instances,
    Correction,
}

impl fmt::Display for StageRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            StageRole::Contexts => "contexts",
            StageRole::Seeds => "seeds",
            StageRole::Instances => "instances",
            StageRole::Correction => "correction",
        };
        f.write_str(name)
    }
}

/// Shape of the free-text output a stage expects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseKind {
    NumberedList,
    FieldedRecord { labels: Vec<String> },
    LabelOnly,
    Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseRule {
    #[serde(flatten)]
    pub kind: ParseKind,
    #[serde(default, skip_serializing_if = "is_false")]
    pub case_sensitive: bool,
    /// Tolerate preamble and trailing sections such as `Explanation:`.
    #[serde(default, skip_serializing_if = "is_false")]
    pub allow_extra_text: bool,
    /// Reject records whose labels appear in a different order.
    #[serde(default, skip_serializing_if = "is_false")]
    pub strict_order: bool,
    /// Treat leading unlabeled text as the first field, for prompts that
    /// end with the first label already written out.
    #[serde(default, skip_serializing_if = "is_false")]
    pub implicit_first: bool,
}

fn is_false(value: &bool) -> bool {
    !*value
}

impl ParseRule {
    pub fn numbered_list() -> Self {
        Self::with_kind(ParseKind::NumberedList)
    }

    pub fn fielded<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_kind(ParseKind::FieldedRecord {
            labels: labels.into_iter().map(Into::into).collect(),
        })
    }

    pub fn label_only() -> Self {
        Self::with_kind(ParseKind::LabelOnly)
    }

    pub fn verdict() -> Self {
        Self::with_kind(ParseKind::Verdict)
    }

    fn with_kind(kind: ParseKind) -> Self {
        Self {
            kind,
            case_sensitive: false,
            allow_extra_text: false,
            strict_order: false,
            implicit_first: false,
        }
    }

    pub fn allow_extra_text(mut self, allow: bool) -> Self {
        self.allow_extra_text = allow;
        self
    }

    pub fn strict_order(mut self, strict: bool) -> Self {
        self.strict_order = strict;
        self
    }

    pub fn implicit_first(mut self, implicit: bool) -> Self {
        self.implicit_first = implicit;
        self
    }

    pub fn case_sensitive(mut self, sensitive: bool) -> Self {
        self.case_sensitive = sensitive;
        self
    }

    /// Expected field labels of a fielded record, empty for other kinds.
    pub fn field_labels(&self) -> &[String] {
        match &self.kind {
            ParseKind::FieldedRecord { labels } => labels,
            _ => &[],
        }
    }
}

/// How the items of a seed stage's follow-up prompt become seed payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpandMode {
    /// The whole parsed list is stored, numbered, in one payload field.
    Aggregate,
    /// Every parsed list item becomes its own seed.
    FanOut,
    /// A fielded record whose fields are stored under snake-cased keys.
    Record,
}

/// Second prompt run once per first-level seed item (e.g. definitions of a
/// word, paragraphs on a topic).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedExpansion {
    pub template: String,
    pub parser: ParseRule,
    pub mode: ExpandMode,
    /// Payload key written by `aggregate` and `fan_out` modes.
    #[serde(default)]
    pub field: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptStage {
    pub role: StageRole,
    /// Label this stage is constrained to; `None` means one stage serves
    /// every label (the label is then applied by post-processing).
    #[serde(default)]
    pub label: Option<String>,
    /// Named alternative of the same stage (e.g. a cause and a result query).
    #[serde(default)]
    pub variant: Option<String>,
    pub template: String,
    pub parser: ParseRule,
    pub count: usize,
    /// Seed stages: payload key holding each first-level list item.
    #[serde(default)]
    pub item_field: Option<String>,
    /// Seed stages: every payload key a finished seed may carry.
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub expand: Option<SeedExpansion>,
    /// Instance stages: target field → source (`seed.<key>`, `context`,
    /// `record.<Label>` or `record.<Label>[i]`).
    #[serde(default)]
    pub fields: Vec<(String, String)>,
    /// Instance stages of open-label tasks: where the answer comes from.
    #[serde(default)]
    pub label_source: Option<String>,
}

impl PromptStage {
    pub fn new(role: StageRole, template: impl Into<String>, parser: ParseRule) -> Self {
        Self {
            role,
            label: None,
            variant: None,
            template: template.into(),
            parser,
            count: 1,
            item_field: None,
            outputs: Vec::new(),
            expand: None,
            fields: Vec::new(),
            label_source: None,
        }
    }

    /// Human-readable stage name used in validation issues.
    pub fn describe(&self, index: usize) -> String {
        let mut name = format!("stage {} ({}", index + 1, self.role);
        if let Some(label) = &self.label {
            name.push_str(&format!(", label \"{label}\""));
        }
        if let Some(variant) = &self.variant {
            name.push_str(&format!(", variant \"{variant}\""));
        }
        name.push(')');
        name
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ExemplarVerdict {
    Correct,
    Incorrect,
}

/// One worked self-correction example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionExemplar {
    pub input: String,
    pub actual: String,
    pub predicted: String,
    pub verdict: ExemplarVerdict,
    #[serde(default)]
    pub explanation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionSpec {
    pub instructions: String,
    pub exemplars: Vec<CorrectionExemplar>,
    pub max_retries: usize,
}

/// Planned label distribution policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalancePolicy {
    Balanced,
    Alternating,
    Explicit(Vec<(String, usize)>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub description: String,
    pub label_schema: LabelSchema,
    pub field_schema: Vec<String>,
    pub stages: Vec<PromptStage>,
    pub balance_policy: BalancePolicy,
    pub correction: CorrectionSpec,
    /// Seed payload key selecting an instance-stage variant.
    #[serde(default)]
    pub variant_field: Option<String>,
    /// Contexts used verbatim instead of a contexts prompt.
    #[serde(default)]
    pub fixed_contexts: Vec<String>,
}

impl TaskSpec {
    pub fn stage(&self, role: StageRole) -> Option<&PromptStage> {
        self.stages.iter().find(|stage| stage.role == role)
    }

    pub fn instance_stages(&self) -> impl Iterator<Item = &PromptStage> {
        self.stages
            .iter()
            .filter(|stage| stage.role == StageRole::Instances)
    }

    /// Distinct instance-stage variants in declaration order.
    pub fn variants(&self) -> Vec<Option<String>> {
        let mut variants: Vec<Option<String>> = Vec::new();
        for stage in self.instance_stages() {
            if !variants.contains(&stage.variant) {
                variants.push(stage.variant.clone());
            }
        }
        variants
    }

    /// The instance stage for a planned label and variant: a label-specific
    /// stage wins over a label-parameterized one.
    pub fn instance_stage(&self, label: &str, variant: Option<&str>) -> Option<&PromptStage> {
        let matches_variant = |stage: &&PromptStage| stage.variant.as_deref() == variant;
        let specific = self.instance_stages().filter(matches_variant).find(|stage| {
            stage
                .label
                .as_deref()
                .is_some_and(|l| l.trim().eq_ignore_ascii_case(label.trim()))
        });
        specific.or_else(|| {
            self.instance_stages()
                .filter(matches_variant)
                .find(|stage| stage.label.is_none())
        })
    }

    /// Payload keys a seed of this task may carry.
    pub fn seed_payload_keys(&self) -> BTreeSet<String> {
        match self.stage(StageRole::Seeds) {
            Some(stage) => {
                let mut keys: BTreeSet<String> = stage.outputs.iter().cloned().collect();
                keys.extend(stage.item_field.iter().cloned());
                if let Some(expand) = &stage.expand {
                    keys.extend(expand.field.iter().cloned());
                }
                keys
            }
            None => BTreeSet::from([CONTEXT_PAYLOAD_KEY.to_string()]),
        }
    }
}

/// Payload key of the pass-through seed built from a context.
pub const CONTEXT_PAYLOAD_KEY: &str = "context";

/// Placeholder names that always resolve to the current context.
pub const CONTEXT_PLACEHOLDERS: [&str; 3] = ["CONTEXT", "DOMAIN", "CATEGORY"];

/// One problem found by [`validate_task_spec`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationIssue {
    /// Where the problem is (`labels`, `fields`, `stage 3 (instances)`, ...).
    pub location: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

fn issue(location: impl Into<String>, message: impl Into<String>) -> ValidationIssue {
    ValidationIssue {
        location: location.into(),
        message: message.into(),
    }
}

/// Placeholder names (`{NAME}`) appearing in a template, in order.
pub fn template_placeholders(template: &str) -> Vec<String> {
    let mut names = Vec::new();
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(len) = placeholder_len(&bytes[i + 1..]) {
                names.push(template[i + 1..i + 1 + len].to_string());
                i += len + 2;
                continue;
            }
        }
        i += 1;
    }
    names
}

/// Length of a placeholder name starting at `rest` if it is closed by `}`.
fn placeholder_len(rest: &[u8]) -> Option<usize> {
    let first = *rest.first()?;
    if !first.is_ascii_uppercase() {
        return None;
    }
    let len = rest
        .iter()
        .take_while(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || **b == b'_')
        .count();
    (rest.get(len) == Some(&b'}')).then_some(len)
}

/// Substitutes `{NAME}` placeholders; unknown names are left untouched.
pub fn render_template(template: &str, lookup: impl Fn(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(template.len());
    let bytes = template.as_bytes();
    let mut last = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(len) = placeholder_len(&bytes[i + 1..]) {
                let name = &template[i + 1..i + 1 + len];
                if let Some(value) = lookup(name) {
                    out.push_str(&template[last..i]);
                    out.push_str(&value);
                    last = i + len + 2;
                }
                i += len + 2;
                continue;
            }
        }
        i += 1;
    }
    out.push_str(&template[last..]);
    out
}

/// Placeholder name for a payload key (`sentence1` → `SENTENCE1`).
pub fn placeholder_for(key: &str) -> String {
    key.to_uppercase()
}

fn allowed_placeholders(spec: &TaskSpec, stage: &PromptStage) -> BTreeSet<String> {
    let mut allowed = BTreeSet::from(["N".to_string()]);
    match stage.role {
        StageRole::Contexts => {}
        StageRole::Seeds => {
            allowed.extend(CONTEXT_PLACEHOLDERS.iter().map(|s| s.to_string()));
        }
        StageRole::Instances => {
            allowed.extend(CONTEXT_PLACEHOLDERS.iter().map(|s| s.to_string()));
            allowed.insert("LABEL".to_string());
            allowed.insert("VARIANT".to_string());
            allowed.extend(spec.seed_payload_keys().iter().map(|k| placeholder_for(k)));
        }
        StageRole::Correction => {
            allowed.insert("INPUT".to_string());
            allowed.insert("OUTPUT".to_string());
        }
    }
    allowed
}

fn check_parse_rule(location: &str, rule: &ParseRule, issues: &mut Vec<ValidationIssue>) {
    if let ParseKind::FieldedRecord { labels } = &rule.kind {
        if labels.is_empty() {
            issues.push(issue(location, "fielded_record parser declares no field labels"));
        }
        let mut seen = HashSet::new();
        for label in labels {
            let folded = label.trim().to_lowercase();
            if folded.is_empty() {
                issues.push(issue(location, "fielded_record parser has an empty field label"));
            } else if !seen.insert(folded) {
                issues.push(issue(
                    location,
                    format!("fielded_record parser repeats field label \"{label}\""),
                ));
            }
        }
    }
}

fn check_source(
    spec: &TaskSpec,
    location: &str,
    stage: &PromptStage,
    source: &str,
    issues: &mut Vec<ValidationIssue>,
) {
    match parse_source(source) {
        Some(FieldSource::Context) => {}
        Some(FieldSource::Seed(key)) => {
            if !spec.seed_payload_keys().contains(key) {
                issues.push(issue(
                    location,
                    format!("source \"{source}\" names seed key \"{key}\" that no seed carries"),
                ));
            }
        }
        Some(FieldSource::Record { label, .. }) => {
            let known = stage
                .parser
                .field_labels()
                .iter()
                .any(|l| l.trim().eq_ignore_ascii_case(label.trim()));
            if !known {
                issues.push(issue(
                    location,
                    format!("source \"{source}\" names record field \"{label}\" the parser does not expect"),
                ));
            }
        }
        None => issues.push(issue(location, format!("unrecognised field source \"{source}\""))),
    }
}

/// Where an instance field's text comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldSource<'a> {
    Context,
    Seed(&'a str),
    /// A parsed record field, optionally the i-th (1-based) numbered item in it.
    Record { label: &'a str, item: Option<usize> },
}

pub fn parse_source(source: &str) -> Option<FieldSource<'_>> {
    let source = source.trim();
    if source == "context" {
        return Some(FieldSource::Context);
    }
    if let Some(key) = source.strip_prefix("seed.") {
        return (!key.is_empty()).then_some(FieldSource::Seed(key));
    }
    let rest = source.strip_prefix("record.")?;
    if let Some(open) = rest.rfind('[') {
        let inner = rest[open + 1..].strip_suffix(']')?;
        let item: usize = inner.trim().parse().ok()?;
        if item == 0 || open == 0 {
            return None;
        }
        return Some(FieldSource::Record {
            label: &rest[..open],
            item: Some(item),
        });
    }
    (!rest.is_empty()).then_some(FieldSource::Record {
        label: rest,
        item: None,
    })
}

/// Reports every structural problem of `spec`; an empty list means the
/// pipeline can run it.
pub fn validate_task_spec(spec: &TaskSpec) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();

    if spec.task_id.trim().is_empty() {
        issues.push(issue("task", "task id is empty"));
    }
    for message in spec.label_schema.issues() {
        issues.push(issue("labels", message));
    }

    if spec.field_schema.is_empty() {
        issues.push(issue("fields", "field schema is empty"));
    }
    let mut seen_fields = HashSet::new();
    for field in &spec.field_schema {
        if field.trim().is_empty() {
            issues.push(issue("fields", "empty field name"));
        } else if !seen_fields.insert(field.as_str()) {
            issues.push(issue("fields", format!("duplicate field \"{field}\"")));
        }
    }

    for role in [StageRole::Contexts, StageRole::Seeds, StageRole::Correction] {
        let count = spec.stages.iter().filter(|s| s.role == role).count();
        if count > 1 {
            issues.push(issue("stages", format!("{count} {role} stages declared, at most one allowed")));
        }
    }
    if !spec.fixed_contexts.is_empty() && spec.stage(StageRole::Contexts).is_some() {
        issues.push(issue("stages", "fixed contexts and a contexts stage are both declared"));
    }

    for (index, stage) in spec.stages.iter().enumerate() {
        let location = stage.describe(index);
        if stage.count < 1 {
            issues.push(issue(&location, "count must be at least 1"));
        }
        if let Some(label) = &stage.label {
            if stage.role != StageRole::Instances {
                issues.push(issue(&location, "only instance stages may be label-constrained"));
            } else if spec.label_schema.is_open() || !spec.label_schema.contains(label) {
                issues.push(issue(
                    &location,
                    format!("label \"{label}\" is not in the label schema"),
                ));
            }
        }
        check_parse_rule(&location, &stage.parser, &mut issues);

        let expected_kind_ok = match stage.role {
            StageRole::Contexts => matches!(stage.parser.kind, ParseKind::NumberedList),
            StageRole::Seeds => matches!(stage.parser.kind, ParseKind::NumberedList),
            StageRole::Instances => matches!(stage.parser.kind, ParseKind::FieldedRecord { .. }),
            StageRole::Correction => matches!(stage.parser.kind, ParseKind::Verdict | ParseKind::LabelOnly),
        };
        if !expected_kind_ok {
            issues.push(issue(&location, format!("parser kind does not suit a {} stage", stage.role)));
        }

        let allowed = allowed_placeholders(spec, stage);
        for name in template_placeholders(&stage.template) {
            if !allowed.contains(&name) {
                issues.push(issue(&location, format!("undeclared placeholder {{{name}}}")));
            }
        }

        match stage.role {
            StageRole::Seeds => {
                if stage.item_field.as_deref().is_none_or(|f| f.trim().is_empty()) {
                    issues.push(issue(&location, "seed stage needs an item_field"));
                }
                if let Some(expand) = &stage.expand {
                    let mut expand_allowed = allowed.clone();
                    expand_allowed.extend(spec.seed_payload_keys().iter().map(|k| placeholder_for(k)));
                    for name in template_placeholders(&expand.template) {
                        if !expand_allowed.contains(&name) {
                            issues.push(issue(
                                &location,
                                format!("undeclared placeholder {{{name}}} in expansion"),
                            ));
                        }
                    }
                    check_parse_rule(&location, &expand.parser, &mut issues);
                    let field_needed = matches!(expand.mode, ExpandMode::Aggregate | ExpandMode::FanOut);
                    if field_needed && expand.field.is_none() {
                        issues.push(issue(&location, "expansion needs a payload field"));
                    }
                    if expand.mode == ExpandMode::Record
                        && !matches!(expand.parser.kind, ParseKind::FieldedRecord { .. })
                    {
                        issues.push(issue(&location, "record expansion needs a fielded_record parser"));
                    }
                }
            }
            StageRole::Instances => {
                let mut targets = HashSet::new();
                for (target, source) in &stage.fields {
                    if !spec.field_schema.contains(target) {
                        issues.push(issue(&location, format!("maps unknown field \"{target}\"")));
                    }
                    if !targets.insert(target.as_str()) {
                        issues.push(issue(&location, format!("maps field \"{target}\" twice")));
                    }
                    check_source(spec, &location, stage, source, &mut issues);
                }
                match (&stage.label_source, spec.label_schema.is_open()) {
                    (Some(source), true) => check_source(spec, &location, stage, source, &mut issues),
                    (Some(_), false) => issues.push(issue(&location, "label_source is only meaningful for open label schemas")),
                    (None, true) => issues.push(issue(&location, "open label schema needs a label_source")),
                    (None, false) => {}
                }
            }
            _ => {}
        }
    }

    check_instance_coverage(spec, &mut issues);

    if let Some(field) = &spec.variant_field {
        if !spec.seed_payload_keys().contains(field) {
            issues.push(issue("task", format!("variant field \"{field}\" is not a seed payload key")));
        }
    }

    if let BalancePolicy::Explicit(counts) = &spec.balance_policy {
        let mut seen = HashSet::new();
        for (label, _) in counts {
            match spec.label_schema.canonical(label) {
                Some(canonical) if !spec.label_schema.is_open() => {
                    if !seen.insert(canonical) {
                        issues.push(issue("balance", format!("label \"{label}\" counted twice")));
                    }
                }
                _ => issues.push(issue("balance", format!("label \"{label}\" is not in the label schema"))),
            }
        }
    }

    check_correction(spec, &mut issues);
    issues
}

fn check_instance_coverage(spec: &TaskSpec, issues: &mut Vec<ValidationIssue>) {
    let variants = spec.variants();
    if variants.is_empty() {
        issues.push(issue("stages", "no instance stage declared"));
        return;
    }
    for variant in &variants {
        let in_variant: Vec<&PromptStage> = spec
            .instance_stages()
            .filter(|s| s.variant == *variant)
            .collect();
        let variant_name = variant
            .as_deref()
            .map(|v| format!(" (variant \"{v}\")"))
            .unwrap_or_default();
        let parameterized = in_variant.iter().filter(|s| s.label.is_none()).count();
        if parameterized > 1 {
            issues.push(issue(
                "stages",
                format!("{parameterized} label-parameterized instance stages{variant_name}"),
            ));
        }
        if spec.label_schema.is_open() {
            if parameterized == 0 {
                issues.push(issue("stages", format!("open label schema needs a label-parameterized instance stage{variant_name}")));
            }
            continue;
        }
        for label in spec.label_schema.labels() {
            let specific = in_variant
                .iter()
                .filter(|s| {
                    s.label
                        .as_deref()
                        .is_some_and(|l| spec.label_schema.canonical(l).as_deref() == Some(label))
                })
                .count();
            if specific > 1 {
                issues.push(issue(
                    "stages",
                    format!("{specific} instance stages for label \"{label}\"{variant_name}"),
                ));
            } else if specific == 1 && parameterized > 0 {
                issues.push(issue(
                    "stages",
                    format!("label \"{label}\" has both a dedicated and a parameterized instance stage{variant_name}"),
                ));
            } else if specific == 0 && parameterized == 0 {
                issues.push(issue(
                    "stages",
                    format!("no instance stage for label \"{label}\"{variant_name}"),
                ));
            }
        }
    }
}

fn check_correction(spec: &TaskSpec, issues: &mut Vec<ValidationIssue>) {
    let correction = &spec.correction;
    if correction.instructions.trim().is_empty() {
        issues.push(issue("correction", "task instructions are empty"));
    }
    let has = |verdict| correction.exemplars.iter().any(|e| e.verdict == verdict);
    if !has(ExemplarVerdict::Correct) {
        issues.push(issue("correction", "no CORRECT exemplar"));
    }
    if !has(ExemplarVerdict::Incorrect) {
        issues.push(issue("correction", "no INCORRECT exemplar"));
    }
    for (index, exemplar) in correction.exemplars.iter().enumerate() {
        let location = format!("correction exemplar {}", index + 1);
        if exemplar.input.trim().is_empty() {
            issues.push(issue(&location, "input is empty"));
        }
        for (what, value) in [("actual result", &exemplar.actual), ("output", &exemplar.predicted)] {
            if !spec.label_schema.contains(value) {
                issues.push(issue(&location, format!("{what} \"{value}\" is not a schema label")));
            }
        }
        let same = spec.label_schema.canonical(&exemplar.actual) == spec.label_schema.canonical(&exemplar.predicted);
        match exemplar.verdict {
            ExemplarVerdict::Correct if !same => {
                issues.push(issue(&location, "CORRECT exemplar has differing actual result and output"))
            }
            ExemplarVerdict::Incorrect if same => {
                issues.push(issue(&location, "INCORRECT exemplar has matching actual result and output"))
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> TaskSpec {
        let mut instance = PromptStage::new(
            StageRole::Instances,
            "Premise: {SENTENCE}\nWrite a hypothesis labelled {LABEL}.",
            ParseRule::fielded(["Hypothesis"]),
        );
        instance.fields = vec![
            ("premise".into(), "seed.sentence".into()),
            ("hypothesis".into(), "record.Hypothesis".into()),
        ];
        let mut seeds = PromptStage::new(
            StageRole::Seeds,
            "Write {N} sentences about {DOMAIN}.",
            ParseRule::numbered_list(),
        );
        seeds.item_field = Some("sentence".into());
        TaskSpec {
            task_id: "tiny".into(),
            description: "toy entailment".into(),
            label_schema: LabelSchema::closed(["yes", "no"]).unwrap(),
            field_schema: vec!["premise".into(), "hypothesis".into()],
            stages: vec![seeds, instance],
            balance_policy: BalancePolicy::Balanced,
            correction: CorrectionSpec {
                instructions: "Say yes or no.".into(),
                exemplars: vec![
                    CorrectionExemplar {
                        input: "a".into(),
                        actual: "yes".into(),
                        predicted: "yes".into(),
                        verdict: ExemplarVerdict::Correct,
                        explanation: None,
                    },
                    CorrectionExemplar {
                        input: "b".into(),
                        actual: "no".into(),
                        predicted: "yes".into(),
                        verdict: ExemplarVerdict::Incorrect,
                        explanation: None,
                    },
                ],
                max_retries: 1,
            },
            variant_field: None,
            fixed_contexts: Vec::new(),
        }
    }

    #[test]
    fn tiny_spec_is_valid() {
        assert_eq!(validate_task_spec(&tiny_spec()), vec![]);
    }

    #[test]
    fn label_schema_rules() {
        assert!(LabelSchema::closed(["a"]).is_err());
        assert!(LabelSchema::closed(["a", " A "]).is_err());
        assert!(LabelSchema::closed(["a", ""]).is_err());
        let schema = LabelSchema::closed(["TRUE", "FALSE"]).unwrap();
        assert_eq!(schema.canonical(" true "), Some("TRUE".to_string()));
        assert_eq!(schema.canonical("maybe"), None);
        let open = LabelSchema::open("entity").unwrap();
        assert_eq!(open.canonical(" German "), Some("German".to_string()));
        assert_eq!(open.canonical("  "), None);
    }

    #[test]
    fn undeclared_placeholder_is_reported() {
        let mut spec = tiny_spec();
        spec.stages[1].template.push_str(" {WORD}");
        let issues = validate_task_spec(&spec);
        assert_eq!(issues.len(), 1);
        assert!(issues[0].message.contains("{WORD}"));
    }

    #[test]
    fn missing_label_stage_is_reported() {
        let mut spec = tiny_spec();
        spec.stages[1].label = Some("yes".into());
        let issues = validate_task_spec(&spec);
        assert_eq!(issues.len(), 1, "{issues:?}");
        assert!(issues[0].message.contains("\"no\""));
    }

    #[test]
    fn correction_needs_both_verdicts() {
        let mut spec = tiny_spec();
        spec.correction.exemplars.pop();
        let issues = validate_task_spec(&spec);
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].message, "no INCORRECT exemplar");
    }

    #[test]
    fn zero_count_is_reported() {
        let mut spec = tiny_spec();
        spec.stages[0].count = 0;
        assert_eq!(validate_task_spec(&spec).len(), 1);
    }

    #[test]
    fn placeholders_and_rendering() {
        let template = "Word: {WORD} {not one} {N}} {{X}";
        assert_eq!(template_placeholders(template), vec!["WORD", "N", "X"]);
        let rendered = render_template(template, |name| match name {
            "WORD" => Some("key".into()),
            "N" => Some("4".into()),
            _ => None,
        });
        assert_eq!(rendered, "Word: key {not one} 4} {{X}");
    }

    #[test]
    fn field_sources() {
        assert_eq!(parse_source("context"), Some(FieldSource::Context));
        assert_eq!(parse_source("seed.word"), Some(FieldSource::Seed("word")));
        assert_eq!(
            parse_source("record.Sentences[2]"),
            Some(FieldSource::Record { label: "Sentences", item: Some(2) })
        );
        assert_eq!(
            parse_source("record.Hypothesis 1"),
            Some(FieldSource::Record { label: "Hypothesis 1", item: None })
        );
        assert_eq!(parse_source("record.X[0]"), None);
        assert_eq!(parse_source("other"), None);
    }
}
