//! Steps 1 to 3 of generation: label planning, contexts, instance seeds and
//! label-constrained instances, with checkpointing and resumption.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{request_hash, Backend, BackendError, ChatMessage, ChatRequest, ChatResponse};
use crate::instance::{
    instance_id, Dataset, Decoding, Fields, GeneratedInstance, InstanceError, InstanceSeed, LabelCount,
    Manifest, Provenance, StepState, TOOL_VERSION,
};
use crate::schema::{
    parse_source, placeholder_for, render_template, validate_task_spec, BalancePolicy, ExpandMode,
    FieldSource, LabelSchema, ParseKind, ParseRule, PromptStage, StageRole, TaskSpec, ValidationIssue,
    CONTEXT_PAYLOAD_KEY, CONTEXT_PLACEHOLDERS,
};
use crate::taskpacks::{validate_fields, PostContext, TaskPack};
use crate::textparse::{parse_fielded_record, parse_numbered_list, ParsedRecord};

/// Ordered labels, one per instance to generate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPlan {
    labels: Vec<String>,
    sequence: Vec<String>,
}

impl LabelPlan {
    pub fn sequence(&self) -> &[String] {
        &self.sequence
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    /// Planned count per label, in schema order.
    pub fn counts(&self) -> Vec<LabelCount> {
        self.labels
            .iter()
            .map(|label| LabelCount {
                label: label.clone(),
                count: self.sequence.iter().filter(|l| *l == label).count(),
            })
            .collect()
    }
}

/// Plans `total` labels. Balanced and alternating policies cycle through
/// the schema in order (for two labels both give A, B, A, B, ...); explicit
/// counts are laid out grouped in schema order.
pub fn plan_labels(schema: &LabelSchema, total: usize, policy: &BalancePolicy) -> Result<LabelPlan, PipelineError> {
    let labels = schema.labels().to_vec();
    let sequence = match policy {
        BalancePolicy::Balanced | BalancePolicy::Alternating => {
            (0..total).map(|i| labels[i % labels.len()].clone()).collect()
        }
        BalancePolicy::Explicit(counts) => {
            let mut per_label = vec![0usize; labels.len()];
            for (label, count) in counts {
                let index = schema
                    .index_of(label)
                    .filter(|_| !schema.is_open())
                    .or_else(|| schema.is_open().then_some(0))
                    .ok_or_else(|| PipelineError::Plan(format!("label \"{label}\" is not in the schema")))?;
                per_label[index] += count;
            }
            let sum: usize = per_label.iter().sum();
            if sum != total {
                return Err(PipelineError::Plan(format!(
                    "explicit counts sum to {sum}, requested total is {total}"
                )));
            }
            labels
                .iter()
                .zip(&per_label)
                .flat_map(|(label, &count)| std::iter::repeat_n(label.clone(), count))
                .collect()
        }
    };
    Ok(LabelPlan { labels, sequence })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Number of instances to generate.
    pub total: usize,
    /// Contexts to generate; defaults to the contexts stage count.
    pub contexts: Option<usize>,
    /// Seeds per context; defaults to the seeds stage count.
    pub seeds_per_context: Option<usize>,
    /// Overrides the task's balance policy.
    pub policy: Option<BalancePolicy>,
    pub decoding: Decoding,
    /// Re-asks after an unusable response, per item.
    pub parse_retries: usize,
    /// Calls without a new context tolerated before giving up.
    pub context_budget: usize,
    /// Instances per seed; defaults to ⌈total / seeds⌉.
    pub per_seed_capacity: Option<usize>,
    /// Fail when a context yields no seeds instead of skipping it.
    pub strict: bool,
    /// Instance prompts issued at once.
    #[serde(skip)]
    pub concurrency: usize,
    #[serde(skip)]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip)]
    pub checkpoint_every: usize,
    #[serde(skip)]
    pub resume: bool,
    /// Pin timestamps to zero.
    pub reproducible: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            total: 0,
            contexts: None,
            seeds_per_context: None,
            policy: None,
            decoding: Decoding::default(),
            parse_retries: 2,
            context_budget: 2,
            per_seed_capacity: None,
            strict: false,
            concurrency: 1,
            checkpoint: None,
            checkpoint_every: 50,
            resume: false,
            reproducible: false,
        }
    }
}

impl PipelineConfig {
    pub fn with_total(total: usize) -> Self {
        Self {
            total,
            ..Self::default()
        }
    }

    fn now(&self) -> u64 {
        if self.reproducible {
            0
        } else {
            SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
        }
    }

    fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid task spec: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidSpec(Vec<ValidationIssue>),
    #[error("label plan: {0}")]
    Plan(String),
    #[error("{step}: retry budget exhausted with {} of the requested items", .partial.len())]
    BudgetExhausted { step: &'static str, partial: Vec<String> },
    #[error("no seeds produced{}", .context.as_ref().map(|c| format!(" for context \"{c}\"")).unwrap_or_default())]
    NoSeeds { context: Option<String> },
    #[error("plan unfulfilled: {missing} planned instances could not be generated")]
    PlanUnfulfilled {
        missing: usize,
        instances: Vec<GeneratedInstance>,
        /// The partial dataset, when raised by [`run_pipeline`].
        dataset: Option<Box<Dataset>>,
    },
    #[error("{step}: {source}")]
    Backend {
        step: &'static str,
        #[source]
        source: BackendError,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

impl PipelineError {
    fn backend(step: &'static str) -> impl FnOnce(BackendError) -> Self {
        move |source| Self::Backend { step, source }
    }
}

/// Maps `f` over `items` on up to `concurrency` threads, keeping order.
pub(crate) fn parallel_map<T: Sync, R: Send>(items: &[T], concurrency: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if concurrency <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let f = &f;
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(concurrency) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk.iter().map(|item| scope.spawn(move || f(item))).collect();
            out.extend(handles.into_iter().map(|h| h.join().expect("worker thread panicked")));
        });
    }
    out
}

/// Counts calls made through it.
struct Counting<'a> {
    inner: &'a dyn Backend,
    calls: AtomicU64,
}

impl Backend for Counting<'_> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

fn generation_request(messages: Vec<ChatMessage>, decoding: &Decoding) -> ChatRequest {
    ChatRequest {
        messages,
        model: decoding.model.clone(),
        temperature: decoding.generation_temperature,
        max_tokens: decoding.max_tokens,
    }
}

const CONTINUATION: &str =
    "Continue the list with {N} more items that are not already listed above. Output them as a numbered list.";

fn context_key(item: &str) -> String {
    item.trim().trim_end_matches('.').trim().to_lowercase()
}

/// Step 1: asks for `k` contexts, continuing the conversation until `k`
/// distinct ones (compared case-insensitively) are collected. A call that
/// adds nothing new counts against `config.context_budget`.
pub fn generate_contexts(
    pack: &TaskPack,
    backend: &dyn Backend,
    k: usize,
    config: &PipelineConfig,
) -> Result<Vec<String>, PipelineError> {
    let spec = &pack.spec;
    if !spec.fixed_contexts.is_empty() {
        return Ok(spec.fixed_contexts.iter().take(k).cloned().collect());
    }
    let stage = spec
        .stage(StageRole::Contexts)
        .ok_or_else(|| PipelineError::Plan(format!("task {} has no contexts stage", spec.task_id)))?;
    let mut contexts: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    if k == 0 {
        return Ok(contexts);
    }
    let first = render_template(&stage.template, |name| (name == "N").then(|| k.to_string()));
    let mut messages = vec![ChatMessage::user(first)];
    let mut stalls = 0;
    loop {
        let response = backend
            .complete(&generation_request(messages.clone(), &config.decoding))
            .map_err(PipelineError::backend("contexts"))?;
        let mut added = 0;
        match parse_numbered_list(&response.content) {
            Ok(items) => {
                for item in items {
                    let item = item.trim().to_string();
                    if contexts.len() < k && seen.insert(context_key(&item)) {
                        contexts.push(item);
                        added += 1;
                    }
                }
            }
            Err(error) => debug!("contexts: unparseable response: {error}"),
        }
        if contexts.len() >= k {
            return Ok(contexts);
        }
        if added == 0 {
            stalls += 1;
            if stalls >= config.context_budget.max(1) {
                return Err(PipelineError::BudgetExhausted {
                    step: "contexts",
                    partial: contexts,
                });
            }
        }
        let remaining = (k - contexts.len()).to_string();
        messages.push(ChatMessage::assistant(response.content));
        messages.push(ChatMessage::user(CONTINUATION.replace("{N}", &remaining)));
    }
}

fn has_context_source(spec: &TaskSpec) -> bool {
    !spec.fixed_contexts.is_empty() || spec.stage(StageRole::Contexts).is_some()
}

fn context_lookup<'a>(context: Option<&'a str>) -> impl Fn(&str) -> Option<String> + 'a {
    move |name| {
        CONTEXT_PLACEHOLDERS
            .contains(&name)
            .then(|| context.unwrap_or_default().to_string())
    }
}

/// Asks until `parse` accepts a response, at most `retries + 1` times.
/// Returns the parsed value and the request hash, or `None` when every
/// attempt was unusable.
fn ask_parsed<T>(
    backend: &dyn Backend,
    request: &ChatRequest,
    retries: usize,
    what: &str,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<Option<(T, String)>, BackendError> {
    let hash = request_hash(request);
    for attempt in 1..=retries + 1 {
        let response = backend.complete(request)?;
        match parse(&response.content) {
            Ok(value) => return Ok(Some((value, hash))),
            Err(error) => debug!("{what}: attempt {attempt}/{}: {error}", retries + 1),
        }
    }
    Ok(None)
}

fn parse_list(text: &str) -> Result<Vec<String>, String> {
    parse_numbered_list(text).map_err(|e| e.to_string())
}

fn snake_case(label: &str) -> String {
    let mut out = String::new();
    for c in label.trim().chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.ends_with('_') && !out.is_empty() {
            out.push('_');
        }
    }
    out.trim_end_matches('_').to_string()
}

fn apply_seed_processors(pack: &TaskPack, payloads: Vec<Fields>, after_expansion: bool) -> Vec<Fields> {
    let mut current = payloads;
    for processor in pack.seed_processors.iter().filter(|p| p.after_expansion() == after_expansion) {
        let mut next = Vec::new();
        for payload in current {
            match processor.apply(payload) {
                Ok(out) => next.extend(out),
                Err(error) => warn!("seed processor {}: {error}; item skipped", processor.name()),
            }
        }
        current = next;
    }
    current
}

/// Runs the expansion prompt for one payload.
fn expand_payload(
    stage: &PromptStage,
    backend: &dyn Backend,
    context: Option<&str>,
    payload: Fields,
    hashes: &mut BTreeMap<String, String>,
    config: &PipelineConfig,
) -> Result<Vec<Fields>, BackendError> {
    let Some(expand) = &stage.expand else {
        return Ok(vec![payload]);
    };
    let lookup_context = context_lookup(context);
    let prompt = render_template(&expand.template, |name| {
        if name == "N" {
            return Some(stage.count.to_string());
        }
        payload
            .iter()
            .find(|(key, _)| placeholder_for(key) == name)
            .map(|(_, value)| value.clone())
            .or_else(|| lookup_context(name))
    });
    let request = generation_request(vec![ChatMessage::user(prompt)], &config.decoding);
    let field = expand.field.clone().unwrap_or_default();
    let parsed = match expand.mode {
        ExpandMode::Aggregate | ExpandMode::FanOut => {
            ask_parsed(backend, &request, config.parse_retries, "seed expansion", parse_list)?.map(|(items, hash)| {
                let payloads = if expand.mode == ExpandMode::Aggregate {
                    let joined = items
                        .iter()
                        .enumerate()
                        .map(|(i, item)| format!("{}. {item}", i + 1))
                        .collect::<Vec<_>>()
                        .join("\n");
                    let mut out = payload.clone();
                    out.insert(field.clone(), joined);
                    vec![out]
                } else {
                    items
                        .into_iter()
                        .map(|item| {
                            let mut out = payload.clone();
                            out.insert(field.clone(), item);
                            out
                        })
                        .collect()
                };
                (payloads, hash)
            })
        }
        ExpandMode::Record => ask_parsed(backend, &request, config.parse_retries, "seed expansion", |text| {
            parse_fielded_record(text, &expand.parser).map_err(|e| e.to_string())
        })?
        .map(|(record, hash)| {
            let mut out = payload.clone();
            for (label, value) in record.fields {
                out.insert(snake_case(&label), value);
            }
            (vec![out], hash)
        }),
    };
    match parsed {
        Some((payloads, hash)) => {
            hashes.insert("seed_expansion".into(), hash);
            Ok(payloads)
        }
        None => {
            warn!("seed expansion failed for {:?}; item skipped", payload.values().next());
            Ok(Vec::new())
        }
    }
}

/// Step 2: one seed-stage call per context (plus any expansion calls).
/// Tasks without a seeds stage turn each context into a pass-through seed.
pub fn generate_seeds(
    pack: &TaskPack,
    backend: &dyn Backend,
    contexts: &[String],
    n_per_context: usize,
    config: &PipelineConfig,
) -> Result<Vec<InstanceSeed>, PipelineError> {
    let spec = &pack.spec;
    let anonymous = contexts.is_empty() && !has_context_source(spec);
    let slots: Vec<(Option<String>, Option<String>)> = if anonymous {
        vec![(None, None)]
    } else {
        contexts
            .iter()
            .enumerate()
            .map(|(i, c)| (Some(format!("c{:04}", i + 1)), Some(c.clone())))
            .collect()
    };

    let mut seeds: Vec<InstanceSeed> = Vec::new();
    let mut seen_payloads: HashSet<Vec<(String, String)>> = HashSet::new();
    for (context_id, context) in slots {
        let mut produced: Vec<(Fields, BTreeMap<String, String>)> = Vec::new();
        match spec.stage(StageRole::Seeds) {
            None => {
                if let Some(text) = &context {
                    produced.push((Fields::from([(CONTEXT_PAYLOAD_KEY.to_string(), text.clone())]), BTreeMap::new()));
                }
            }
            Some(stage) => {
                let lookup_context = context_lookup(context.as_deref());
                let prompt = render_template(&stage.template, |name| {
                    if name == "N" {
                        Some(n_per_context.to_string())
                    } else {
                        lookup_context(name)
                    }
                });
                let request = generation_request(vec![ChatMessage::user(prompt)], &config.decoding);
                let parsed = ask_parsed(backend, &request, config.parse_retries, "seeds", parse_list)
                    .map_err(PipelineError::backend("seeds"))?;
                let Some((items, hash)) = parsed else {
                    warn!("seeds: no usable list for context {:?}", context);
                    if config.strict {
                        return Err(PipelineError::NoSeeds { context: context.clone() });
                    }
                    continue;
                };
                let item_field = stage.item_field.clone().unwrap_or_default();
                for item in items.into_iter().take(n_per_context) {
                    let payload = Fields::from([(item_field.clone(), item)]);
                    for payload in apply_seed_processors(pack, vec![payload], false) {
                        let mut hashes = BTreeMap::from([("seeds".to_string(), hash.clone())]);
                        let expanded = expand_payload(stage, backend, context.as_deref(), payload, &mut hashes, config)
                            .map_err(PipelineError::backend("seeds"))?;
                        for payload in apply_seed_processors(pack, expanded, true) {
                            produced.push((payload, hashes.clone()));
                        }
                    }
                }
            }
        }
        let mut kept = 0;
        for (payload, hashes) in produced {
            let key: Vec<(String, String)> = payload.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            if !seen_payloads.insert(key) {
                debug!("seeds: duplicate payload dropped");
                continue;
            }
            let seed_id = format!("{}-s{:05}", spec.task_id, seeds.len() + 1);
            match InstanceSeed::new(seed_id, context_id.clone(), context.clone(), payload) {
                Ok(mut seed) => {
                    for (stage, hash) in hashes {
                        seed = seed.with_prompt_hash(stage, hash);
                    }
                    seeds.push(seed);
                    kept += 1;
                }
                Err(error) => warn!("seeds: {error}; skipped"),
            }
        }
        if kept == 0 {
            warn!("seeds: context {:?} yielded no seeds", context);
            if config.strict {
                return Err(PipelineError::NoSeeds { context });
            }
        }
    }
    info!("seeds: {} from {} contexts", seeds.len(), contexts.len().max(usize::from(anonymous)));
    Ok(seeds)
}

/// The instance-stage variant used with a seed.
pub fn variant_for(spec: &TaskSpec, seed: &InstanceSeed, seed_index: usize) -> Option<String> {
    let variants = spec.variants();
    if variants.len() <= 1 {
        return variants.into_iter().next().flatten();
    }
    if let Some(wanted) = spec.variant_field.as_deref().and_then(|field| seed.get(field)) {
        if let Some(found) = variants
            .iter()
            .flatten()
            .find(|v| v.eq_ignore_ascii_case(wanted.trim()))
        {
            return Some(found.clone());
        }
    }
    variants[seed_index % variants.len()].clone()
}

fn source_value(source: &str, seed: &InstanceSeed, record: &ParsedRecord) -> Result<String, String> {
    match parse_source(source) {
        Some(FieldSource::Context) => seed.context().map(str::to_string).ok_or("seed has no context".into()),
        Some(FieldSource::Seed(key)) => seed
            .get(key)
            .map(str::to_string)
            .ok_or_else(|| format!("seed has no \"{key}\"")),
        Some(FieldSource::Record { label, item }) => {
            let value = record.get(label).ok_or_else(|| format!("response has no \"{label}\""))?;
            match item {
                None => Ok(value.to_string()),
                Some(i) => {
                    let items = parse_numbered_list(value).map_err(|e| format!("{label}: {e}"))?;
                    items
                        .get(i - 1)
                        .cloned()
                        .ok_or_else(|| format!("{label} has {} items, item {i} needed", items.len()))
                }
            }
        }
        None => Err(format!("bad field source \"{source}\"")),
    }
}

/// One generated instance before it is numbered.
struct Draft {
    fields: Fields,
    label: String,
    hash: String,
    notes: Option<String>,
}

fn render_instance_prompt(stage: &PromptStage, seed: &InstanceSeed, label: &str, variant: Option<&str>) -> String {
    let lookup_context = context_lookup(seed.context());
    render_template(&stage.template, |name| match name {
        "N" => Some("1".to_string()),
        "LABEL" => Some(label.to_string()),
        "VARIANT" => variant.map(str::to_string),
        _ => seed
            .payload()
            .iter()
            .find(|(key, _)| placeholder_for(key) == name)
            .map(|(_, value)| value.clone())
            .or_else(|| lookup_context(name)),
    })
}

/// Parses, maps, post-processes and validates one response.
fn draft_from_response(
    pack: &TaskPack,
    stage: &PromptStage,
    seed: &InstanceSeed,
    label: &str,
    variant: Option<&str>,
    text: &str,
) -> Result<(Fields, String, Option<String>), String> {
    let spec = &pack.spec;
    let rule: &ParseRule = &stage.parser;
    let record = match &rule.kind {
        ParseKind::FieldedRecord { .. } => parse_fielded_record(text, rule).map_err(|e| e.to_string())?,
        _ => return Err("instance stage needs a fielded_record parser".into()),
    };
    let mut fields = Fields::new();
    for (target, source) in &stage.fields {
        let value = source_value(source, seed, &record)?;
        fields.insert(target.clone(), value.trim().to_string());
    }
    let mut label = label.to_string();
    if let Some(source) = &stage.label_source {
        label = source_value(source, seed, &record)?;
    }
    let mut ctx = PostContext {
        label,
        variant,
        seed,
        record: &record,
    };
    for processor in &pack.post_processors {
        processor.apply(&mut fields, &mut ctx)?;
    }
    let label = pack
        .normalize_label(&ctx.label)
        .ok_or_else(|| format!("label \"{}\" is not admissible", ctx.label.trim()))?;
    let ordered: Fields = spec
        .field_schema
        .iter()
        .map(|f| (f.clone(), fields.get(f).cloned().unwrap_or_default()))
        .collect();
    let issues = validate_fields(pack, &ordered, &label);
    if let Some(first) = issues.first() {
        return Err(format!("invalid instance: {first}"));
    }
    let notes = (!record.trailing_unparsed.trim().is_empty()).then(|| record.trailing_unparsed.trim().to_string());
    Ok((ordered, label, notes))
}

fn attempt_instance(
    pack: &TaskPack,
    backend: &dyn Backend,
    seed: &InstanceSeed,
    label: &str,
    variant: Option<&str>,
    config: &PipelineConfig,
) -> Result<Option<Draft>, BackendError> {
    let Some(stage) = pack.spec.instance_stage(label, variant) else {
        warn!("no instance stage for label {label:?} variant {variant:?}");
        return Ok(None);
    };
    let prompt = render_instance_prompt(stage, seed, label, variant);
    let request = generation_request(vec![ChatMessage::user(prompt)], &config.decoding);
    let parsed = ask_parsed(backend, &request, config.parse_retries, seed.seed_id(), |text| {
        draft_from_response(pack, stage, seed, label, variant, text)
    })?;
    Ok(parsed.map(|((fields, label, notes), hash)| Draft {
        fields,
        label,
        hash,
        notes,
    }))
}

/// Resumable state of a run, stored in checkpoint manifests.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunState {
    /// Hash of the generation-relevant configuration.
    pub config_hash: String,
    pub contexts: Vec<String>,
    pub seeds: Vec<InstanceSeed>,
    pub plan: Vec<String>,
    /// Planned labels not yet turned into instances, in order.
    pub queue: Vec<String>,
    pub seed_uses: Vec<usize>,
    pub dead_seeds: Vec<bool>,
    pub next_seed: usize,
    /// Backend calls made so far, across resumptions.
    pub backend_calls: u64,
}

/// Step 3 state machine: walks the plan, assigning seeds round-robin.
struct InstanceRun {
    queue: VecDeque<String>,
    uses: Vec<usize>,
    dead: Vec<bool>,
    next_seed: usize,
    capacity: usize,
    instances: Vec<GeneratedInstance>,
}

impl InstanceRun {
    fn new(seeds: usize, plan: &[String], capacity: Option<usize>) -> Self {
        let default_capacity = if seeds == 0 { 0 } else { plan.len().div_ceil(seeds) };
        Self {
            queue: plan.iter().cloned().collect(),
            uses: vec![0; seeds],
            dead: vec![false; seeds],
            next_seed: 0,
            capacity: capacity.unwrap_or(default_capacity).max(1),
            instances: Vec::new(),
        }
    }

    fn restore(state: &RunState, instances: Vec<GeneratedInstance>, capacity: Option<usize>) -> Self {
        let mut run = Self::new(state.seeds.len(), &state.plan, capacity);
        run.queue = state.queue.iter().cloned().collect();
        run.uses = state.seed_uses.clone();
        run.dead = state.dead_seeds.clone();
        run.next_seed = state.next_seed;
        run.instances = instances;
        run
    }

    fn save(&self, state: &mut RunState) {
        state.queue = self.queue.iter().cloned().collect();
        state.seed_uses = self.uses.clone();
        state.dead_seeds = self.dead.clone();
        state.next_seed = self.next_seed;
    }

    /// Next batch of (seed index, label) assignments.
    fn assign(&mut self, batch: usize) -> Vec<(usize, String)> {
        let n = self.uses.len();
        let mut pending = vec![0usize; n];
        let mut out = Vec::new();
        while out.len() < batch && !self.queue.is_empty() {
            let pick = (0..n)
                .map(|offset| (self.next_seed + offset) % n)
                .find(|&i| !self.dead[i] && self.uses[i] + pending[i] < self.capacity);
            let Some(i) = pick else { break };
            let label = self.queue.pop_front().expect("queue checked nonempty");
            pending[i] += 1;
            self.next_seed = (i + 1) % n;
            out.push((i, label));
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn drive(
        &mut self,
        pack: &TaskPack,
        backend: &dyn Backend,
        seeds: &[InstanceSeed],
        config: &PipelineConfig,
        on_progress: &mut dyn FnMut(&InstanceRun) -> Result<(), PipelineError>,
    ) -> Result<(), PipelineError> {
        let spec = &pack.spec;
        let backend_id = backend.id();
        let batch_size = config.concurrency.max(1);
        let every = config.checkpoint_every.max(1);
        while !self.queue.is_empty() {
            let batch = self.assign(batch_size);
            if batch.is_empty() {
                return Err(PipelineError::PlanUnfulfilled {
                    missing: self.queue.len(),
                    instances: self.instances.clone(),
                    dataset: None,
                });
            }
            let work: Vec<(usize, String, Option<String>)> = batch
                .into_iter()
                .map(|(i, label)| {
                    let variant = variant_for(spec, &seeds[i], i);
                    (i, label, variant)
                })
                .collect();
            let results = parallel_map(&work, batch_size, |(i, label, variant)| {
                attempt_instance(pack, backend, &seeds[*i], label, variant.as_deref(), config)
            });
            let mut failed_labels = Vec::new();
            let mut error = None;
            let before = self.instances.len();
            for ((i, label, variant), result) in work.into_iter().zip(results) {
                if error.is_some() {
                    failed_labels.push(label);
                    continue;
                }
                match result {
                    Err(source) => {
                        self.next_seed = i;
                        error = Some(PipelineError::Backend {
                            step: "instances",
                            source,
                        });
                        failed_labels.push(label);
                    }
                    Ok(None) => {
                        warn!("instances: seed {} exhausted its retry budget; skipped", seeds[i].seed_id());
                        self.dead[i] = true;
                        failed_labels.push(label);
                    }
                    Ok(Some(draft)) => {
                        let seed = &seeds[i];
                        let mut prompt_hashes = seed.prompt_hashes().clone();
                        prompt_hashes.insert("instances".into(), draft.hash);
                        let provenance = Provenance {
                            context_id: seed.context_id().map(str::to_string),
                            seed_id: Some(seed.seed_id().to_string()),
                            variant,
                            prompt_hashes,
                            backend_id: backend_id.clone(),
                            created_at: config.now(),
                            notes: draft.notes,
                        };
                        let id = instance_id(&spec.task_id, self.instances.len());
                        let instance = GeneratedInstance::new(spec, id, draft.fields, &draft.label, provenance)?;
                        self.instances.push(instance);
                        self.uses[i] += 1;
                    }
                }
            }
            for label in failed_labels.into_iter().rev() {
                self.queue.push_front(label);
            }
            if let Some(error) = error {
                return Err(error);
            }
            if self.instances.len() / every > before / every {
                on_progress(self)?;
            }
        }
        Ok(())
    }
}

/// Step 3: one instance per planned label, seeds assigned round-robin.
/// A seed whose responses stay unusable after the retry budget is retired
/// and its label re-queued for the next seed.
pub fn generate_instances(
    pack: &TaskPack,
    backend: &dyn Backend,
    seeds: &[InstanceSeed],
    plan: &LabelPlan,
    config: &PipelineConfig,
) -> Result<Vec<GeneratedInstance>, PipelineError> {
    let mut run = InstanceRun::new(seeds.len(), plan.sequence(), config.per_seed_capacity);
    run.drive(pack, backend, seeds, config, &mut |_| Ok(()))?;
    Ok(run.instances)
}

struct Checkpointer<'a> {
    config: &'a PipelineConfig,
    manifest: Manifest,
}

impl Checkpointer<'_> {
    fn write(&self, state: &RunState, steps: &StepState, instances: &[GeneratedInstance]) -> Result<(), PipelineError> {
        let Some(path) = &self.config.checkpoint else {
            return Ok(());
        };
        let mut manifest = self.manifest.clone();
        manifest.steps = steps.clone();
        manifest.run_state = Some(state.clone());
        let dataset = Dataset::new(manifest.task_id.clone(), instances.to_vec(), manifest)?;
        crate::store::write_dataset(path, &dataset).map_err(|e| PipelineError::Checkpoint(e.to_string()))?;
        debug!("checkpoint: {} instances written to {}", instances.len(), path.display());
        Ok(())
    }
}

fn run_id(task_hash: &str, backend_id: &str, config_hash: &str) -> String {
    let digest = Sha256::digest(format!("{task_hash}\n{backend_id}\n{config_hash}").as_bytes());
    hex::encode(&digest[..8])
}

/// Steps 1 to 3. With `config.checkpoint` set, state is written after each
/// step and every `checkpoint_every` instances; with `config.resume`, an
/// existing checkpoint for the same task and configuration is continued.
pub fn run_pipeline(pack: &TaskPack, backend: &dyn Backend, config: &PipelineConfig) -> Result<Dataset, PipelineError> {
    let spec = &pack.spec;
    let issues = validate_task_spec(spec);
    if !issues.is_empty() {
        return Err(PipelineError::InvalidSpec(issues));
    }
    let policy = config.policy.clone().unwrap_or_else(|| spec.balance_policy.clone());
    let plan = plan_labels(&spec.label_schema, config.total, &policy)?;
    let task_hash = pack.content_hash();
    let config_hash = config.hash();
    let counting = Counting {
        inner: backend,
        calls: AtomicU64::new(0),
    };
    let backend_id = backend.id();

    let manifest = Manifest {
        run_id: run_id(&task_hash, &backend_id, &config_hash),
        task_id: spec.task_id.clone(),
        task_hash: task_hash.clone(),
        backend_id,
        decoding: config.decoding.clone(),
        labels: spec.label_schema.clone(),
        fields: spec.field_schema.clone(),
        targets: plan.counts(),
        total: plan.len(),
        steps: StepState::default(),
        instance_count: 0,
        tool_version: TOOL_VERSION.to_string(),
        created_at: config.now(),
        reproducible: config.reproducible,
        confusion: None,
        run_state: None,
    };
    let checkpointer = Checkpointer {
        config,
        manifest: manifest.clone(),
    };

    let mut steps = StepState::default();
    let mut state = RunState {
        config_hash: config_hash.clone(),
        plan: plan.sequence().to_vec(),
        queue: plan.sequence().to_vec(),
        ..RunState::default()
    };
    let mut instances = Vec::new();
    if let Some(path) = config.checkpoint.as_ref().filter(|p| config.resume && p.exists()) {
        let previous = crate::store::read_dataset(path).map_err(|e| PipelineError::Checkpoint(e.to_string()))?;
        let (previous_instances, previous_manifest) = previous.into_parts();
        if previous_manifest.task_hash != task_hash {
            return Err(PipelineError::Checkpoint(format!(
                "{} was written for a different task spec",
                path.display()
            )));
        }
        let previous_state = previous_manifest
            .run_state
            .ok_or_else(|| PipelineError::Checkpoint(format!("{} carries no run state", path.display())))?;
        if previous_state.config_hash != config_hash {
            return Err(PipelineError::Checkpoint(format!(
                "{} was written with a different configuration",
                path.display()
            )));
        }
        info!(
            "resuming from {}: {} instances, steps {:?}",
            path.display(),
            previous_instances.len(),
            previous_manifest.steps
        );
        steps = previous_manifest.steps;
        state = previous_state;
        instances = previous_instances;
    }
    let calls_before = state.backend_calls;
    let sync_calls = |state: &mut RunState| state.backend_calls = calls_before + counting.calls.load(Ordering::SeqCst);

    if plan.is_empty() {
        steps = StepState {
            contexts: true,
            seeds: true,
            instances: true,
            correction: false,
        };
    }

    if !steps.contexts {
        let k = config.contexts.unwrap_or_else(|| {
            if spec.fixed_contexts.is_empty() {
                spec.stage(StageRole::Contexts).map_or(0, |s| s.count)
            } else {
                spec.fixed_contexts.len()
            }
        });
        state.contexts = if has_context_source(spec) {
            match generate_contexts(pack, &counting, k, config) {
                Ok(contexts) => contexts,
                Err(error) => {
                    sync_calls(&mut state);
                    checkpointer.write(&state, &steps, &instances)?;
                    return Err(error);
                }
            }
        } else {
            Vec::new()
        };
        steps.contexts = true;
        sync_calls(&mut state);
        checkpointer.write(&state, &steps, &instances)?;
        info!("contexts: {}", state.contexts.len());
    }

    if !steps.seeds {
        let n = config
            .seeds_per_context
            .unwrap_or_else(|| spec.stage(StageRole::Seeds).map_or(1, |s| s.count));
        let seeds = generate_seeds(pack, &counting, &state.contexts, n, config);
        sync_calls(&mut state);
        state.seeds = match seeds {
            Ok(seeds) if seeds.is_empty() => return Err(PipelineError::NoSeeds { context: None }),
            Ok(seeds) => seeds,
            Err(error) => {
                checkpointer.write(&state, &steps, &instances)?;
                return Err(error);
            }
        };
        state.seed_uses = vec![0; state.seeds.len()];
        state.dead_seeds = vec![false; state.seeds.len()];
        steps.seeds = true;
        checkpointer.write(&state, &steps, &instances)?;
    }

    if !steps.instances {
        let mut run = InstanceRun::restore(&state, instances, config.per_seed_capacity);
        let seeds = state.seeds.clone();
        let outcome = {
            let mut progress = |run: &InstanceRun| {
                let mut snapshot = state.clone();
                run.save(&mut snapshot);
                snapshot.backend_calls = calls_before + counting.calls.load(Ordering::SeqCst);
                checkpointer.write(&snapshot, &steps, &run.instances)
            };
            run.drive(pack, &counting, &seeds, config, &mut progress)
        };
        run.save(&mut state);
        sync_calls(&mut state);
        instances = run.instances;
        match outcome {
            Ok(()) => steps.instances = true,
            Err(PipelineError::PlanUnfulfilled { missing, .. }) => {
                checkpointer.write(&state, &steps, &instances)?;
                let mut partial = manifest.clone();
                partial.steps = steps.clone();
                let dataset = Dataset::new(spec.task_id.clone(), instances.clone(), partial)?;
                return Err(PipelineError::PlanUnfulfilled {
                    missing,
                    instances,
                    dataset: Some(Box::new(dataset)),
                });
            }
            Err(error) => {
                checkpointer.write(&state, &steps, &instances)?;
                return Err(error);
            }
        }
    }
    sync_calls(&mut state);
    checkpointer.write(&state, &steps, &instances)?;
    let mut manifest = manifest;
    manifest.steps = steps;
    info!(
        "generated {} instances with {} backend calls",
        instances.len(),
        state.backend_calls
    );
    Ok(Dataset::new(spec.task_id.clone(), instances, manifest)?)
}
