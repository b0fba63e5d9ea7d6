//! Step 4: evaluate every generated instance with one shared meta-prompt,
//! relabel the ones judged incorrect and tally the outcome.

use std::fmt::Write as _;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, ChatRequest};
use crate::instance::{Dataset, Decoding, GeneratedInstance, InstanceError, Status};
use crate::pipeline::parallel_map;
use crate::schema::{CorrectionExemplar, CorrectionSpec, ExemplarVerdict, LabelSchema};
use crate::taskpacks::TaskPack;
use crate::textparse::{extract_label, strip_decoration};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judgement {
    Correct,
    Incorrect,
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub judgement: Judgement,
    /// The evaluator's label; present for incorrect verdicts.
    pub corrected_label: Option<String>,
    pub rationale: String,
}

impl Verdict {
    fn unparseable(text: &str) -> Self {
        Self {
            judgement: Judgement::Unparseable,
            corrected_label: None,
            rationale: text.trim().to_string(),
        }
    }
}

/// "sentence1" → "Sentence 1", "alt_premise" → "Alt premise".
pub fn display_name(key: &str) -> String {
    let digits = key.len() - key.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    let (stem, number) = key.split_at(key.len() - digits);
    let stem = stem.trim_end_matches('_').replace('_', " ");
    let mut name: String = stem
        .chars()
        .enumerate()
        .map(|(i, c)| if i == 0 { c.to_ascii_uppercase() } else { c })
        .collect();
    if !number.is_empty() {
        name.push(' ');
        name.push_str(number);
    }
    name
}

/// The instance's inputs as "Field: value" lines.
pub fn render_input(instance: &GeneratedInstance) -> String {
    instance
        .inputs()
        .iter()
        .map(|(key, value)| {
            if value.contains('\n') {
                format!("{}:\n{}", display_name(key), value.trim())
            } else {
                format!("{}: {}", display_name(key), value.trim())
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_exemplar(exemplar: &CorrectionExemplar) -> String {
    let verdict = match exemplar.verdict {
        ExemplarVerdict::Correct => "CORRECT",
        ExemplarVerdict::Incorrect => "INCORRECT",
    };
    let mut out = String::new();
    let _ = writeln!(out, "Input:\n{}", exemplar.input.trim());
    let _ = writeln!(out, "Actual result: {}", exemplar.actual);
    let _ = writeln!(out, "Output: {}", exemplar.predicted);
    let _ = writeln!(out, "Based on this input and the given task instructions, the output is {verdict}.");
    if let Some(explanation) = &exemplar.explanation {
        let _ = writeln!(out, "Explanation for Actual result: {}", explanation.trim());
    }
    let _ = writeln!(out, "Actual result: {}", exemplar.actual);
    let _ = writeln!(out, "Output: {}", exemplar.predicted);
    match exemplar.verdict {
        ExemplarVerdict::Correct => out.push_str("Actual result matches the output, so the output is CORRECT."),
        ExemplarVerdict::Incorrect => {
            out.push_str("Actual result does not match the output, so the output is INCORRECT.")
        }
    }
    out
}

/// Text of the evaluation prompt for one instance.
pub fn meta_prompt_text(spec: &CorrectionSpec, instance: &GeneratedInstance) -> String {
    let exemplars = spec
        .exemplars
        .iter()
        .map(render_exemplar)
        .collect::<Vec<_>>()
        .join("\n\n");
    format!(
        "These are the “task instructions” you are given to accomplish a task:\n\n{}\n\n\
         Your task is to evaluate whether, based on these instructions and an input, the output is correct or incorrect. \
         Also provide an explanation for your reasoning.\n\n{}\n\n\
         Now evaluate the input and output below based on task instructions, and print whether the output is correct or incorrect. \
         Remember to provide an explanation for your evaluation. \
         Remember, the actual answer is based on the input and the task instructions, not the output.\n\
         Input:\n{}\nOutput: {}\nEvaluation:",
        spec.instructions.trim(),
        exemplars,
        render_input(instance),
        instance.final_label(),
    )
}

pub fn build_meta_prompt(spec: &CorrectionSpec, instance: &GeneratedInstance, decoding: &Decoding) -> ChatRequest {
    ChatRequest::user(
        meta_prompt_text(spec, instance),
        decoding.model.clone(),
        decoding.correction_temperature,
        decoding.max_tokens,
    )
}

fn word_positions(text: &str, word: &str) -> Vec<usize> {
    let bytes = text.as_bytes();
    text.match_indices(word)
        .map(|(at, _)| at)
        .filter(|&at| {
            let before = at == 0 || !bytes[at - 1].is_ascii_alphanumeric();
            let end = at + word.len();
            let after = end >= bytes.len() || !bytes[end].is_ascii_alphanumeric();
            before && after
        })
        .collect()
}

/// The last verdict word in the text decides; uppercase verdicts win over
/// lowercase phrasing.
fn judgement_of(text: &str) -> Option<Judgement> {
    let last = |correct: Vec<usize>, incorrect: Vec<usize>| match (correct.last(), incorrect.last()) {
        (None, None) => None,
        (Some(_), None) => Some(Judgement::Correct),
        (None, Some(_)) => Some(Judgement::Incorrect),
        (Some(c), Some(i)) => Some(if c > i { Judgement::Correct } else { Judgement::Incorrect }),
    };
    last(word_positions(text, "CORRECT"), word_positions(text, "INCORRECT")).or_else(|| {
        let lower = text.to_lowercase();
        let mut correct = word_positions(&lower, "output is correct");
        correct.extend(word_positions(&lower, "output is right"));
        let mut incorrect = word_positions(&lower, "output is incorrect");
        incorrect.extend(word_positions(&lower, "output is not correct"));
        incorrect.extend(word_positions(&lower, "output is wrong"));
        correct.sort_unstable();
        incorrect.sort_unstable();
        last(correct, incorrect)
    })
}

const REGION_STOPS: [&str; 5] = ["output", "based on", "explanation", "actual result", "evaluation"];

/// Text following the first "Actual result:" marker, up to the next
/// section line.
fn actual_result_region(text: &str) -> Option<String> {
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let trimmed = line.trim_start();
        let lower = trimmed.to_lowercase();
        let Some(rest) = lower.strip_prefix("actual result") else {
            continue;
        };
        let rest = &trimmed[trimmed.len() - rest.len()..];
        let value = rest.trim_start().strip_prefix(':').unwrap_or(rest).trim();
        if !value.is_empty() {
            return Some(value.to_string());
        }
        let mut region = Vec::new();
        for next in lines.by_ref() {
            let next_lower = next.trim().to_lowercase();
            if next_lower.is_empty() {
                if region.is_empty() {
                    continue;
                }
                break;
            }
            if REGION_STOPS.iter().any(|stop| next_lower.starts_with(stop)) {
                break;
            }
            region.push(next.trim().to_string());
        }
        return (!region.is_empty()).then(|| region.join("\n"));
    }
    None
}

/// Reads an evaluator response. Incorrect verdicts need an admissible label
/// on the "Actual result" line; anything else is unparseable.
pub fn parse_verdict(text: &str, schema: &LabelSchema) -> Verdict {
    let clean = strip_decoration(text);
    let rationale = clean
        .to_lowercase()
        .find("explanation")
        .map(|at| clean[at..].trim().to_string())
        .unwrap_or_else(|| clean.trim().to_string());
    match judgement_of(&clean) {
        None | Some(Judgement::Unparseable) => Verdict::unparseable(text),
        Some(Judgement::Correct) => Verdict {
            judgement: Judgement::Correct,
            corrected_label: None,
            rationale,
        },
        Some(Judgement::Incorrect) => {
            let label = actual_result_region(&clean).and_then(|region| {
                if schema.is_open() {
                    schema.canonical(&region)
                } else {
                    extract_label(&region, schema).ok()
                }
            });
            match label {
                Some(label) => Verdict {
                    judgement: Judgement::Incorrect,
                    corrected_label: Some(label),
                    rationale,
                },
                None => Verdict::unparseable(text),
            }
        }
    }
}

/// Rows are original labels, columns final labels. Open-answer tasks use
/// the two columns "kept" and "changed".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub cells: Vec<Vec<usize>>,
    pub unverified: Vec<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub open: bool,
}

impl ConfusionMatrix {
    pub fn new(schema: &LabelSchema) -> Self {
        let labels: Vec<String> = if schema.is_open() {
            vec!["kept".into(), "changed".into()]
        } else {
            schema.labels().to_vec()
        };
        let n = labels.len();
        Self {
            labels,
            cells: vec![vec![0; n]; n],
            unverified: vec![0; n],
            open: schema.is_open(),
        }
    }

    /// Tallies a dataset: confirmed and relabeled instances go into cells,
    /// everything else into the unverified column.
    pub fn from_instances(schema: &LabelSchema, instances: &[GeneratedInstance]) -> Self {
        let mut matrix = Self::new(schema);
        for instance in instances {
            let row = if matrix.open {
                0
            } else {
                match schema.index_of(instance.original_label()) {
                    Some(row) => row,
                    None => continue,
                }
            };
            match instance.status() {
                Status::Confirmed | Status::Relabeled => {
                    let col = if matrix.open {
                        usize::from(instance.final_label() != instance.original_label())
                    } else {
                        schema.index_of(instance.final_label()).unwrap_or(row)
                    };
                    matrix.cells[row][col] += 1;
                }
                Status::Raw | Status::Unverified => matrix.unverified[row] += 1,
            }
        }
        matrix
    }

    pub fn cell(&self, original: usize, fin: usize) -> usize {
        self.cells[original][fin]
    }

    /// Verified plus unverified instances originally labeled `row`.
    pub fn row_total(&self, row: usize) -> usize {
        self.cells[row].iter().sum::<usize>() + self.unverified[row]
    }

    pub fn verified_total(&self) -> usize {
        self.cells.iter().flatten().sum()
    }

    pub fn unverified_total(&self) -> usize {
        self.unverified.iter().sum()
    }

    pub fn relabeled_total(&self) -> usize {
        if self.open {
            return self.cells.iter().map(|row| row[1]).sum();
        }
        self.cells
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, c)| c).sum::<usize>())
            .sum()
    }

    /// CSV with a header row of final labels plus "unverified".
    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["original \\ final".to_string()];
        header.extend(self.labels.iter().cloned());
        header.push("unverified".into());
        writer.write_record(&header).expect("in-memory csv");
        let row_names: Vec<String> = if self.open { vec!["answer".into()] } else { self.labels.clone() };
        for (i, name) in row_names.iter().enumerate() {
            let mut record = vec![name.clone()];
            record.extend(self.cells[i].iter().map(ToString::to_string));
            record.push(self.unverified[i].to_string());
            writer.write_record(&record).expect("in-memory csv");
        }
        String::from_utf8(writer.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}

#[derive(Debug, Clone)]
pub struct CorrectionOptions {
    pub decoding: Decoding,
    /// Overrides the pack's re-ask budget for unparseable verdicts.
    pub max_retries: Option<usize>,
    pub concurrency: usize,
}

impl Default for CorrectionOptions {
    fn default() -> Self {
        Self {
            decoding: Decoding::default(),
            max_retries: None,
            concurrency: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum SelfCorrectError {
    #[error("self-correction backend failure after {done} instances: {source}")]
    Backend {
        done: usize,
        #[source]
        source: BackendError,
        /// Dataset with every instance evaluated so far updated.
        partial: Box<Dataset>,
    },
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

/// Asks the evaluator about one instance until it gives a usable verdict or
/// the budget runs out; `None` means unverified.
fn evaluate(
    pack: &TaskPack,
    backend: &dyn Backend,
    instance: &GeneratedInstance,
    options: &CorrectionOptions,
) -> Result<Option<Verdict>, BackendError> {
    let spec = &pack.spec;
    let request = build_meta_prompt(&spec.correction, instance, &options.decoding);
    let attempts = options.max_retries.unwrap_or(spec.correction.max_retries) + 1;
    for attempt in 1..=attempts {
        let response = backend.complete(&request)?;
        let mut verdict = parse_verdict(&response.content, &spec.label_schema);
        if verdict.judgement == Judgement::Incorrect {
            verdict.corrected_label = verdict.corrected_label.as_deref().and_then(|l| pack.normalize_label(l));
            let usable = verdict
                .corrected_label
                .as_deref()
                .is_some_and(|l| Some(l.to_string()) != pack.normalize_label(instance.final_label()));
            if !usable {
                verdict.judgement = Judgement::Unparseable;
            }
        }
        if verdict.judgement != Judgement::Unparseable {
            return Ok(Some(verdict));
        }
        debug!(
            "{}: unusable verdict on attempt {attempt}/{attempts}",
            instance.instance_id()
        );
    }
    warn!("{}: left unverified", instance.instance_id());
    Ok(None)
}

fn apply_verdict(
    schema: &LabelSchema,
    instance: GeneratedInstance,
    verdict: Option<Verdict>,
) -> Result<GeneratedInstance, InstanceError> {
    match verdict {
        None => Ok(instance.unverified()),
        Some(Verdict {
            judgement: Judgement::Incorrect,
            corrected_label: Some(label),
            ..
        }) => instance.relabeled(schema, &label),
        Some(_) => Ok(instance.confirmed()),
    }
}

fn finish(
    schema: &LabelSchema,
    instances: Vec<GeneratedInstance>,
    mut manifest: crate::instance::Manifest,
    complete: bool,
) -> Result<(Dataset, ConfusionMatrix), InstanceError> {
    let matrix = ConfusionMatrix::from_instances(schema, &instances);
    manifest.steps.correction = complete;
    manifest.confusion = Some(matrix.clone());
    let task_id = manifest.task_id.clone();
    Ok((Dataset::new(task_id, instances, manifest)?, matrix))
}

/// Evaluates every instance of `dataset`, returning the updated dataset
/// and its confusion matrix. Evaluations run in batches of
/// `options.concurrency`; results are committed in dataset order.
pub fn self_correct_dataset(
    pack: &TaskPack,
    backend: &dyn Backend,
    dataset: Dataset,
    options: &CorrectionOptions,
) -> Result<(Dataset, ConfusionMatrix), SelfCorrectError> {
    let schema = &pack.spec.label_schema;
    let (instances, manifest) = dataset.into_parts();
    let total = instances.len();
    let mut done: Vec<GeneratedInstance> = Vec::with_capacity(total);
    let mut pending = instances.into_iter();
    let batch_size = options.concurrency.max(1);
    loop {
        let batch: Vec<GeneratedInstance> = pending.by_ref().take(batch_size).collect();
        if batch.is_empty() {
            break;
        }
        let verdicts = parallel_map(&batch, batch_size, |instance| evaluate(pack, backend, instance, options));
        let mut failure = None;
        let mut batch = batch.into_iter();
        for verdict in verdicts {
            let instance = batch.next().expect("one verdict per instance");
            match verdict {
                Ok(verdict) if failure.is_none() => done.push(apply_verdict(schema, instance, verdict)?),
                Ok(_) => done.push(instance),
                Err(error) => {
                    if failure.is_none() {
                        failure = Some(error);
                    }
                    done.push(instance);
                }
            }
        }
        if let Some(source) = failure {
            let evaluated = done.iter().filter(|i| i.status() != Status::Raw).count();
            done.extend(batch);
            done.extend(pending);
            let (partial, _) = finish(schema, done, manifest, false)?;
            return Err(SelfCorrectError::Backend {
                done: evaluated,
                source,
                partial: Box::new(partial),
            });
        }
    }
    Ok(finish(schema, done, manifest, true)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> LabelSchema {
        LabelSchema::closed(["entailment", "not entailment"]).unwrap()
    }

    #[test]
    fn display_names() {
        assert_eq!(display_name("sentence1"), "Sentence 1");
        assert_eq!(display_name("premise"), "Premise");
        assert_eq!(display_name("alt_premise"), "Alt premise");
        assert_eq!(display_name("sentence_2"), "Sentence 2");
    }

    #[test]
    fn verdicts() {
        let incorrect = parse_verdict(
            "Actual result: not entailment\nOutput: entailment\nActual result does not match the output, so the output is INCORRECT.",
            &schema(),
        );
        assert_eq!(incorrect.judgement, Judgement::Incorrect);
        assert_eq!(incorrect.corrected_label.as_deref(), Some("not entailment"));

        let correct = parse_verdict("Actual result matches the output, so the output is CORRECT.", &schema());
        assert_eq!(correct.judgement, Judgement::Correct);
        assert_eq!(correct.corrected_label, None);

        assert_eq!(parse_verdict("I cannot evaluate this.", &schema()).judgement, Judgement::Unparseable);
        let outside = parse_verdict("Actual result: maybe\nthe output is INCORRECT", &schema());
        assert_eq!(outside.judgement, Judgement::Unparseable);
        let lower = parse_verdict("I think the output is incorrect.\nActual result:\nentailment\n", &schema());
        assert_eq!(lower.corrected_label.as_deref(), Some("entailment"));
    }

    #[test]
    fn matrix_csv_layout() {
        let mut matrix = ConfusionMatrix::new(&schema());
        matrix.cells[0][1] = 3;
        matrix.cells[0][0] = 2;
        matrix.unverified[1] = 1;
        let csv = matrix.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "original \\ final,entailment,not entailment,unverified");
        assert_eq!(lines[1], "entailment,2,3,0");
        assert_eq!(lines[2], "not entailment,0,0,1");
        assert_eq!(matrix.relabeled_total(), 3);
        assert_eq!(matrix.row_total(0), 5);
    }
}
