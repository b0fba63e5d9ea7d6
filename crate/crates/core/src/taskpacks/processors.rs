//! Deterministic seed and instance transforms referenced by task packs.

use sha2::{Digest, Sha256};

use crate::instance::{Fields, InstanceSeed};
use crate::textparse::ParsedRecord;

/// Transform applied to seed payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedProcessor {
    /// Splits a `pair` item into `subject1` and `subject2`.
    SplitPair,
    /// Picks the pronoun set offered to the instance prompt.
    ChoosePronouns,
    /// Turns one four-sentence record into one seed per referent.
    AxgReferents,
}

impl SeedProcessor {
    pub const ALL: [SeedProcessor; 3] = [Self::SplitPair, Self::ChoosePronouns, Self::AxgReferents];

    pub fn name(self) -> &'static str {
        match self {
            Self::SplitPair => "split_pair",
            Self::ChoosePronouns => "choose_pronouns",
            Self::AxgReferents => "axg_referents",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Whether the processor runs after the seed stage's expansion prompt.
    pub fn after_expansion(self) -> bool {
        matches!(self, Self::AxgReferents)
    }

    /// Maps one payload to zero or more payloads.
    pub fn apply(self, payload: Fields) -> Result<Vec<Fields>, String> {
        match self {
            Self::SplitPair => {
                let pair = payload.get("pair").ok_or("payload has no \"pair\"")?;
                let (first, second) = split_pair(pair).ok_or_else(|| format!("cannot split pair \"{pair}\""))?;
                let mut out = payload.clone();
                out.insert("subject1".into(), first);
                out.insert("subject2".into(), second);
                Ok(vec![out])
            }
            Self::ChoosePronouns => {
                let subject1 = payload.get("subject1").ok_or("payload has no \"subject1\"")?;
                let subject2 = payload.get("subject2").ok_or("payload has no \"subject2\"")?;
                let pronouns = choose_pronouns(subject1, subject2).to_string();
                let mut out = payload.clone();
                out.insert("pronouns".into(), pronouns);
                Ok(vec![out])
            }
            Self::AxgReferents => {
                let get = |key: &str| {
                    payload
                        .get(key)
                        .filter(|v| !v.trim().is_empty())
                        .cloned()
                        .ok_or_else(|| format!("payload has no \"{key}\""))
                };
                let referents = [
                    (get("subject1")?, get("sentence_1")?, get("sentence_2")?),
                    (get("subject2")?, get("sentence_3")?, get("sentence_4")?),
                ];
                Ok(referents
                    .into_iter()
                    .map(|(subject, premise, alt)| {
                        let mut out = payload.clone();
                        out.insert("subject".into(), subject);
                        out.insert("premise".into(), premise);
                        out.insert("alt_premise".into(), alt);
                        out
                    })
                    .collect())
            }
        }
    }
}

/// Splits "teacher, student", "(Subject1: teacher, Subject 2: student)",
/// "teacher and student" and similar into two trimmed subjects.
pub fn split_pair(item: &str) -> Option<(String, String)> {
    let mut text = item.trim().trim_matches(|c| c == '(' || c == ')').to_string();
    for marker in ["subject 1", "subject1", "subject 2", "subject2"] {
        while let Some(at) = text.to_lowercase().find(marker) {
            let mut end = at + marker.len();
            let rest = &text[end..];
            let skipped = rest.len() - rest.trim_start_matches([' ', ':', '=', '-']).len();
            end += skipped;
            text.replace_range(at..end, "");
        }
    }
    let text = text.replace(['(', ')'], " ");
    let lower = text.to_lowercase();
    let separators = [",", ";", " / ", "/", " - ", " – ", " and ", " & ", " vs. ", " vs "];
    let (at, len) = separators
        .iter()
        .filter_map(|sep| lower.find(sep).map(|at| (at, sep.len())))
        .min_by_key(|(at, _)| *at)?;
    let clean = |s: &str| {
        s.trim()
            .trim_end_matches('.')
            .trim_matches(|c: char| c == '"' || c == '\'' || c == '“' || c == '”')
            .trim()
            .to_string()
    };
    let first = clean(&text[..at]);
    let second = clean(&text[at + len..]);
    (!first.is_empty() && !second.is_empty() && first.to_lowercase() != second.to_lowercase())
        .then_some((first, second))
}

const PLURAL_NOUNS: [&str; 10] = [
    "people", "children", "men", "women", "staff", "police", "crew", "folk", "family", "team",
];

/// Rough plural check on the head (last) word of a noun phrase.
pub fn looks_plural(phrase: &str) -> bool {
    let head = phrase
        .split_whitespace()
        .last()
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    if PLURAL_NOUNS.contains(&head.as_str()) || head.ends_with("men") {
        return true;
    }
    head.len() > 3 && head.ends_with('s') && !head.ends_with("ss") && !head.ends_with("us") && !head.ends_with("is")
}

/// "They/them" for two plural subjects; otherwise a gendered set chosen by a
/// hash of the pair, so the choice is stable across runs.
pub fn choose_pronouns(subject1: &str, subject2: &str) -> &'static str {
    if looks_plural(subject1) && looks_plural(subject2) {
        return "They/them";
    }
    let digest = Sha256::digest(format!("{}\u{1f}{}", subject1.to_lowercase(), subject2.to_lowercase()));
    if digest[0] % 2 == 0 {
        "He/him"
    } else {
        "She/her"
    }
}

/// What a post-processor may read and change besides the instance fields.
pub struct PostContext<'a> {
    pub label: String,
    pub variant: Option<&'a str>,
    pub seed: &'a InstanceSeed,
    pub record: &'a ParsedRecord,
}

/// Deterministic transform of a freshly parsed instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostProcessor {
    /// Puts the plausible hypothesis in the slot named by the planned label.
    CopaOrderChoices,
    /// Appends the CAUSE/RESULT question to the premise.
    CopaAffixQuery,
    /// Resolves `[pronoun=referent]` annotations and orients the subjects.
    WscResolve,
    /// Normalizes the answer to a sorted list of option letters.
    MultircAnswers,
}

impl PostProcessor {
    pub const ALL: [PostProcessor; 4] = [
        Self::CopaOrderChoices,
        Self::CopaAffixQuery,
        Self::WscResolve,
        Self::MultircAnswers,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::CopaOrderChoices => "copa_order_choices",
            Self::CopaAffixQuery => "copa_affix_query",
            Self::WscResolve => "wsc_resolve",
            Self::MultircAnswers => "multirc_answers",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn apply(self, fields: &mut Fields, ctx: &mut PostContext<'_>) -> Result<(), String> {
        match self {
            Self::CopaOrderChoices => {
                if ctx.label.trim().eq_ignore_ascii_case("choice 2") {
                    let one = fields.get("choice1").cloned().unwrap_or_default();
                    let two = fields.get("choice2").cloned().unwrap_or_default();
                    fields.insert("choice1".into(), two);
                    fields.insert("choice2".into(), one);
                }
                Ok(())
            }
            Self::CopaAffixQuery => {
                let variant = ctx.variant.ok_or("COPA instance has no query variant")?;
                let premise = fields.get("premise").ok_or("instance has no premise")?;
                fields.insert("premise".into(), affix_query(premise, variant));
                Ok(())
            }
            Self::WscResolve => wsc_resolve(fields, ctx),
            Self::MultircAnswers => {
                let letters = answer_letters(&ctx.label);
                if letters.is_empty() {
                    return Err(format!("answer \"{}\" names no option letters", ctx.label.trim()));
                }
                ctx.label = letters;
                if let Some(options) = fields.get("options") {
                    let normalized = format_options(&parse_options(options));
                    if !normalized.is_empty() {
                        fields.insert("options".into(), normalized);
                    }
                }
                Ok(())
            }
        }
    }
}

/// `premise` + " What was the CAUSE of this?" (or RESULT); idempotent.
pub fn affix_query(premise: &str, variant: &str) -> String {
    let question = format!("What was the {} of this?", variant.trim().to_uppercase());
    let premise = premise.trim();
    if premise.ends_with(&question) {
        return premise.to_string();
    }
    let terminal = premise.ends_with(['.', '!', '?']);
    format!("{premise}{} {question}", if terminal { "" } else { "." })
}

/// One `[pronoun=referent]` annotation found in generated text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub pronoun: String,
    pub referent: String,
}

/// Strips annotations from `text`, returning the plain text and the
/// annotations in order.
pub fn resolve_annotations(text: &str) -> (String, Vec<Annotation>) {
    let mut out = String::with_capacity(text.len());
    let mut annotations = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let Some(close) = rest[open..].find(']').map(|c| open + c) else {
            break;
        };
        let inner = &rest[open + 1..close];
        match inner.split_once('=') {
            Some((pronoun, referent)) if !pronoun.trim().is_empty() && !referent.trim().is_empty() => {
                out.push_str(&rest[..open]);
                out.push_str(pronoun.trim());
                annotations.push(Annotation {
                    pronoun: pronoun.trim().to_string(),
                    referent: referent.trim().to_string(),
                });
            }
            _ => out.push_str(&rest[..=close]),
        }
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    (out, annotations)
}

fn noun_key(phrase: &str) -> String {
    let lower = phrase.trim().to_lowercase();
    let stripped = ["the ", "a ", "an "]
        .iter()
        .find_map(|article| lower.strip_prefix(article))
        .unwrap_or(&lower);
    stripped.trim_end_matches('s').trim().to_string()
}

fn same_noun(a: &str, b: &str) -> bool {
    let (a, b) = (noun_key(a), noun_key(b));
    !a.is_empty() && !b.is_empty() && (a == b || a.ends_with(&format!(" {b}")) || b.ends_with(&format!(" {a}")))
}

fn wsc_resolve(fields: &mut Fields, ctx: &mut PostContext<'_>) -> Result<(), String> {
    let subject1 = ctx.seed.get("subject1").ok_or("seed has no subject1")?.to_string();
    let subject2 = ctx.seed.get("subject2").ok_or("seed has no subject2")?.to_string();
    let wants_first = ctx.label.trim().eq_ignore_ascii_case("true");
    let order = if wants_first { ["S1", "S2"] } else { ["S2", "S1"] };
    for passage in order.iter().filter_map(|label| ctx.record.get(label)) {
        let (text, annotations) = resolve_annotations(passage);
        for annotation in &annotations {
            let to_first = same_noun(&annotation.referent, &subject1);
            let to_second = same_noun(&annotation.referent, &subject2);
            let (referent, other) = match (to_first, to_second) {
                (true, false) => (&subject1, &subject2),
                (false, true) => (&subject2, &subject1),
                _ => continue,
            };
            let (first, second) = if wants_first { (referent, other) } else { (other, referent) };
            fields.insert("text".into(), text.trim().to_string());
            fields.insert("subject1".into(), first.clone());
            fields.insert("subject2".into(), second.clone());
            fields.insert("pronoun".into(), annotation.pronoun.clone());
            return Ok(());
        }
    }
    Err("no pronoun annotation refers to either subject".into())
}

/// Lettered options ("A) text" or "A. text"), inline or one per line,
/// lettered consecutively from A.
pub fn parse_options(text: &str) -> Vec<(char, String)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut starts = Vec::new();
    let mut expected = 'A';
    for (i, &(at, c)) in chars.iter().enumerate() {
        if c != expected {
            continue;
        }
        let before_ok = i == 0 || chars[i - 1].1.is_whitespace() || chars[i - 1].1 == '(';
        let marker = chars.get(i + 1).map(|p| p.1);
        let after_ok = chars.get(i + 2).is_some_and(|p| p.1.is_whitespace());
        if before_ok && matches!(marker, Some(')') | Some('.') | Some(':')) && after_ok {
            let open = i > 0 && chars[i - 1].1 == '(';
            starts.push((if open { chars[i - 1].0 } else { at }, at + 2, c));
            expected = (expected as u8 + 1) as char;
        }
    }
    let mut options = Vec::new();
    for (index, &(_, body_start, letter)) in starts.iter().enumerate() {
        let end = starts.get(index + 1).map_or(text.len(), |next| next.0);
        let body = text[body_start..end].trim().to_string();
        options.push((letter, body));
    }
    options
}

/// Letters written as option markers ("B)" or "(B)") anywhere in `text`.
fn option_markers(text: &str) -> Vec<char> {
    let chars: Vec<char> = text.chars().collect();
    let mut letters = Vec::new();
    for i in 0..chars.len() {
        let c = chars[i];
        let before_ok = i == 0 || chars[i - 1].is_whitespace() || chars[i - 1] == '(';
        if c.is_ascii_uppercase() && before_ok && chars.get(i + 1) == Some(&')') {
            letters.push(c);
        }
    }
    letters
}

fn format_options(options: &[(char, String)]) -> String {
    options
        .iter()
        .map(|(letter, body)| format!("{letter}) {body}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Sorted, de-duplicated option letters named by an answer, joined as
/// "A, B, D". Accepts "A, B, D", "A and D" or option lines "A) ...".
pub fn answer_letters(answer: &str) -> String {
    let mut letters = option_markers(answer);
    if letters.is_empty() {
        letters = answer
            .split(|c: char| !c.is_alphanumeric())
            .filter_map(|token| {
                let mut chars = token.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) if c.is_ascii_uppercase() => Some(c),
                    _ => None,
                }
            })
            .collect();
    }
    letters.sort_unstable();
    letters.dedup();
    letters.iter().map(char::to_string).collect::<Vec<_>>().join(", ")
}
