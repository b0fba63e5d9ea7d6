//! Structural per-task instance checks.

use unicode_segmentation::UnicodeSegmentation;

use super::processors::{answer_letters, parse_options};
use super::TaskPack;
use crate::instance::{Fields, GeneratedInstance};
use crate::schema::ValidationIssue;

/// Per-task structural check selected by a pack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validator {
    /// Every declared field is nonempty.
    Generic,
    PremiseHypothesis,
    PassageQuestion,
    Copa,
    Wic,
    Wsc,
    Record,
    Multirc,
}

impl Validator {
    pub const ALL: [Validator; 8] = [
        Self::Generic,
        Self::PremiseHypothesis,
        Self::PassageQuestion,
        Self::Copa,
        Self::Wic,
        Self::Wsc,
        Self::Record,
        Self::Multirc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Generic => "generic",
            Self::PremiseHypothesis => "premise_hypothesis",
            Self::PassageQuestion => "passage_question",
            Self::Copa => "copa",
            Self::Wic => "wic",
            Self::Wsc => "wsc",
            Self::Record => "record",
            Self::Multirc => "multirc",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }
}

fn issue(location: &str, message: impl Into<String>) -> ValidationIssue {
    ValidationIssue {
        location: location.to_string(),
        message: message.into(),
    }
}

/// Structural problems of an instance of `pack`'s task; empty means valid.
pub fn validate_instance(pack: &TaskPack, instance: &GeneratedInstance) -> Vec<ValidationIssue> {
    if instance.task_id() != pack.spec.task_id {
        return vec![issue(
            "task",
            format!("instance belongs to {}, pack is {}", instance.task_id(), pack.spec.task_id),
        )];
    }
    validate_fields(pack, instance.inputs(), instance.original_label())
}

/// Same checks as [`validate_instance`] on raw fields and a label.
pub fn validate_fields(pack: &TaskPack, inputs: &Fields, label: &str) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    for field in &pack.spec.field_schema {
        match inputs.get(field) {
            None => issues.push(issue(field, "missing")),
            Some(text) if text.trim().is_empty() => issues.push(issue(field, "empty")),
            Some(_) => {}
        }
    }
    if !issues.is_empty() {
        return issues;
    }
    let get = |key: &str| inputs.get(key).map(String::as_str).unwrap_or("");
    match pack.validator {
        Validator::Generic | Validator::PremiseHypothesis | Validator::PassageQuestion => {}
        Validator::Copa => {
            if get("choice1").trim().eq_ignore_ascii_case(get("choice2").trim()) {
                issues.push(issue("choice2", "choices are identical"));
            }
        }
        Validator::Wic => {
            let word = get("word");
            for field in ["sentence1", "sentence2"] {
                if !contains_keyword(get(field), word) {
                    issues.push(issue(field, format!("does not contain the keyword \"{}\"", word.trim())));
                }
            }
        }
        Validator::Wsc => {
            let text = get("text").to_lowercase();
            for field in ["subject1", "subject2"] {
                if !text.contains(&get(field).trim().to_lowercase()) {
                    issues.push(issue(field, format!("\"{}\" does not occur in the text", get(field).trim())));
                }
            }
            let pronoun = get("pronoun").trim().to_lowercase();
            if !get("text").unicode_words().any(|w| w.to_lowercase() == pronoun) {
                issues.push(issue("pronoun", format!("\"{pronoun}\" does not occur in the text")));
            }
        }
        Validator::Record => {
            match get("query").matches("[X]").count() {
                0 => issues.push(issue("query", "missing mask")),
                1 => {}
                _ => issues.push(issue("query", "multiple masks")),
            }
            let answer = label.trim();
            if answer.is_empty() {
                issues.push(issue("label", "empty answer"));
            } else if !get("passage").contains(answer) {
                issues.push(issue("label", format!("answer \"{answer}\" does not occur in the passage")));
            }
        }
        Validator::Multirc => {
            let options = parse_options(get("options"));
            if options.len() < 2 {
                issues.push(issue("options", format!("{} options, at least 2 needed", options.len())));
            }
            let letters = answer_letters(label);
            if letters.is_empty() {
                issues.push(issue("label", "answer names no options"));
            }
            for letter in letters.split(", ").filter(|l| !l.is_empty()) {
                if !options.iter().any(|(l, _)| l.to_string() == letter) {
                    issues.push(issue("label", format!("answer names missing option {letter}")));
                }
            }
        }
    }
    issues
}

/// Case-insensitive keyword match tolerant of inflection: a token equal to
/// the word, starting with it, or sharing a prefix of at least four
/// characters. Multiword keywords need every part to match.
pub fn contains_keyword(sentence: &str, keyword: &str) -> bool {
    let tokens: Vec<String> = sentence.unicode_words().map(str::to_lowercase).collect();
    let parts: Vec<String> = keyword.unicode_words().map(str::to_lowercase).collect();
    !parts.is_empty()
        && parts
            .iter()
            .all(|part| tokens.iter().any(|token| token_matches(token, part)))
}

fn token_matches(token: &str, word: &str) -> bool {
    if token.starts_with(word) {
        return true;
    }
    let common = token
        .chars()
        .zip(word.chars())
        .take_while(|(a, b)| a == b)
        .count();
    common >= 4
}
