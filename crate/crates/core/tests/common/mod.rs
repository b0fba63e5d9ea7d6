//! Cooperative scripted backend for the built-in packs: recognises which
//! stage a prompt came from and answers in that stage's format.

#![allow(dead_code)]

use targen_core::backend::{request_hash, ChatRequest, ChatResponse, MockBackend};
use targen_core::schema::{template_placeholders, StageRole};
use targen_core::taskpacks::TaskPack;

#[derive(Debug, Clone, PartialEq)]
pub enum Hit {
    Contexts,
    Seeds,
    Expand,
    Instance { label: Option<String> },
    Correction,
}

fn static_segments(template: &str) -> Vec<String> {
    let mut text = template.to_string();
    for name in template_placeholders(template) {
        text = text.replace(&format!("{{{name}}}"), "\u{0}");
    }
    text.split('\u{0}')
        .flat_map(|s| s.lines())
        .map(|s| s.trim().to_string())
        .filter(|s| s.len() >= 12)
        .collect()
}

/// Which stage of `pack` rendered `prompt`.
pub fn classify(pack: &TaskPack, prompt: &str) -> Option<Hit> {
    if prompt.starts_with("Continue the list") {
        return Some(Hit::Contexts);
    }
    if prompt.contains("Evaluation:") && prompt.contains("Output:") && prompt.contains("evaluate") {
        return Some(Hit::Correction);
    }
    let mut best: Option<(usize, Hit)> = None;
    let mut consider = |template: &str, hit: Hit| {
        let segments = static_segments(template);
        if segments.iter().all(|s| prompt.contains(s.as_str())) {
            let score: usize = segments.iter().map(String::len).sum();
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, hit));
            }
        }
    };
    for stage in &pack.spec.stages {
        let hit = match stage.role {
            StageRole::Contexts => Hit::Contexts,
            StageRole::Seeds => Hit::Seeds,
            StageRole::Instances => Hit::Instance {
                label: stage.label.clone(),
            },
            StageRole::Correction => Hit::Correction,
        };
        consider(&stage.template, hit);
        if let Some(expand) = &stage.expand {
            consider(&expand.template, Hit::Expand);
        }
    }
    best.map(|(_, hit)| hit)
}

fn value_after<'a>(prompt: &'a str, label: &str) -> &'a str {
    prompt
        .rfind(label)
        .map(|i| prompt[i + label.len()..].lines().next().unwrap_or("").trim())
        .unwrap_or("")
}

fn numbered(items: impl IntoIterator<Item = String>) -> String {
    items
        .into_iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

const WORDS: [&str; 10] = ["bank", "bark", "bolt", "crane", "match", "novel", "pitch", "spring", "watch", "trunk"];
const PAIRS: [(&str, &str); 10] = [
    ("nurse", "doctor"),
    ("teacher", "student"),
    ("pilot", "engineer"),
    ("chef", "waiter"),
    ("lawyer", "client"),
    ("coach", "player"),
    ("farmer", "buyer"),
    ("captain", "sailor"),
    ("editor", "writer"),
    ("judge", "witness"),
];

/// Answers every stage of `pack` in format; `n` keeps items distinct.
pub fn respond(pack: &TaskPack, prompt: &str, n: usize) -> String {
    let task = pack.spec.task_id.as_str();
    match classify(pack, prompt) {
        Some(Hit::Contexts) => numbered((1..=20).map(|i| format!("setting {n}-{i}"))),
        Some(Hit::Seeds) => match task {
            "wic" => numbered(WORDS.iter().map(|w| w.to_string())),
            "wsc" | "axg" => numbered(PAIRS.iter().map(|(a, b)| format!("{a}{n}, {b}{n}"))),
            "rte" | "copa" => numbered((1..=10).map(|i| format!("The market in town {n} opened stall {i} early."))),
            _ => numbered((1..=10).map(|i| format!("Topic {n}-{i}"))),
        },
        Some(Hit::Expand) => match task {
            "wic" => "1. first sense\n2. second sense\n3. third sense".to_string(),
            "axg" => {
                let s1 = value_after(prompt, "Subject 1:");
                let s2 = value_after(prompt, "Subject 2:");
                format!(
                    "Sentence 1: The {s1} met the {s2} because he was early.\nSentence 2: The {s1} met the {s2} because she was early.\nSentence 3: The {s1} met the {s2} because he was late.\nSentence 4: The {s1} met the {s2} because she was late."
                )
            }
            _ => numbered((1..=3).map(|i| {
                format!("German forces launched the first attack near river {n}-{i}. Allied troops had dug in along the bank.")
            })),
        },
        Some(Hit::Instance { label }) => match task {
            "rte" => format!("Hypothesis: The stall number {n} exists.\nExplanation: follows."),
            "cb" => format!("Sentence 1: The singer {n} was very nervous.\nSentence 2: The singer {n} saw critics."),
            "copa" => format!("Hypothesis 1: Outcome {n} happened.\nHypothesis 2: Nothing {n} changed."),
            "boolq" => format!("Does river {n} flow north?"),
            "record" => "Query: Allied officers watched how [X] troops had dug in.\nAnswer: German".to_string(),
            "axg" => format!("The person number {n} arrived."),
            "wic" => {
                let word = value_after(prompt, "Word:");
                let sentences = format!("1. The {word} was old.\n2. I saw a {word} today {n}.");
                if label.as_deref() == Some("True") {
                    format!("1. first sense\nSentences:\n{sentences}")
                } else {
                    sentences
                }
            }
            "wsc" => {
                let s1 = value_after(prompt, "Subject 1:").split(" Subject 2:").next().unwrap_or("").trim().to_string();
                let s2 = value_after(prompt, "Subject 2:");
                let pronoun = value_after(prompt, "Pronouns:").split('/').next().unwrap_or("he").to_lowercase();
                format!(
                    "S1: The {s1} called the {s2} because [{pronoun}={s1}] was worried.\nS2: The {s1} called the {s2} but [{pronoun}={s2}] was asleep."
                )
            }
            "multirc" => format!(
                "Question: Which forces attacked {n}?\nOptions:\nA) German\nB) Allied\nC) None\nAnswer: A"
            ),
            _ => String::new(),
        },
        Some(Hit::Correction) => "The output is CORRECT.".to_string(),
        None => String::new(),
    }
}

/// A backend answering every stage of `pack` cooperatively. Answers depend
/// only on the request, so concurrent runs see the same text.
pub fn cooperative(pack: &TaskPack) -> MockBackend {
    let pack = pack.clone();
    MockBackend::from_fn(move |_, request: &ChatRequest| {
        let n = request_hash(request)[..6].chars().fold(0usize, |acc, c| acc * 16 + c.to_digit(16).unwrap_or(0) as usize);
        Ok(ChatResponse::stop(respond(&pack, request.prompt(), n)))
    })
}
